//! Schema-driven extraction of property tables from scientific papers with a
//! language model, and evaluation of the extracted rows against a curated
//! gold dataset.
//!
//! The pipeline runs in stages that hand off through files:
//!
//! 1. [`corpus`] turns TEI XML exports into [`corpus::DocumentModel`]s.
//! 2. [`prompting`] assembles whole-document or chunked prompts.
//! 3. [`backend`] completes them against a live endpoint, a replay cache, or
//!    a scripted mock.
//! 4. [`postprocess`] turns response text into typed records.
//! 5. [`align`] pairs extracted rows with gold rows per paper.
//! 6. [`evaluate`] reports match/miss/hallucination counts and error
//!    breakdowns.

pub mod align;
pub mod backend;
pub mod cli;
pub mod corpus;
pub mod evaluate;
pub mod json;
pub mod postprocess;
pub mod prompting;
pub mod schema;

pub use json::parse_lenient_json;
pub use schema::{
    convert_unit, load_schema, normalize_value, render_schema, CellValue, ExtractionSchema,
    FieldKind, FieldSpec, VarianceClass,
};
