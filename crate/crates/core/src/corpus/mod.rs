//! Paper documents: TEI parsing, linearization for prompts, chunking, and
//! gold dataset loading.

mod chunk;
mod gold;
mod tei;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_text, Chunk, ChunkConfig, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP_FRACTION};
pub use gold::{load_gold, GoldRecord};
pub use tei::{parse_tei, parse_tei_with, to_tei, ParseOptions};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed XML at line {line} column {column}: {message}")]
    Xml {
        message: String,
        line: u32,
        column: u32,
    },
    #[error("document has no DOI in its header")]
    MissingDoi,
    #[error("invalid chunking parameters: {0}")]
    ChunkConfig(String),
    #[error("gold CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("gold CSV has columns that are not schema fields: {}", .0.join(", "))]
    UnknownColumns(Vec<String>),
    #[error("gold CSV has no `doi` column")]
    NoDoiColumn,
    #[error("gold CSV line {line}: {message}")]
    Row { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub paragraphs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableBlock {
    pub caption: String,
    /// Rectangular grid; ragged source rows are padded with empty cells.
    pub rows: Vec<Vec<String>>,
    /// Index of this table in the combined flow of sections and tables.
    pub source_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentModel {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub sections: Vec<Section>,
    pub tables: Vec<TableBlock>,
    pub year: Option<i32>,
}

/// One block of the document body, in reading order.
#[derive(Debug, Clone, Copy)]
pub enum Block<'a> {
    Section(&'a Section),
    Table(&'a TableBlock),
}

impl DocumentModel {
    /// Sections and tables interleaved by `source_position`.
    pub fn blocks(&self) -> Vec<Block<'_>> {
        let total = self.sections.len() + self.tables.len();
        let mut out = Vec::with_capacity(total);
        let mut sections = self.sections.iter();
        let mut tables = self.tables.iter().peekable();
        for position in 0..total {
            match tables.peek() {
                Some(t) if t.source_position <= position => {
                    out.push(Block::Table(tables.next().unwrap()));
                }
                _ => match sections.next() {
                    Some(s) => out.push(Block::Section(s)),
                    None => out.extend(tables.by_ref().map(Block::Table)),
                },
            }
        }
        out
    }

    /// Paragraph count across all sections.
    pub fn paragraph_count(&self) -> usize {
        self.sections.iter().map(|s| s.paragraphs.len()).sum()
    }
}

/// Flattens a document into prompt text: title, abstract, then sections and
/// tables in source order. Tables are their caption followed by one
/// pipe-delimited line per row.
pub fn linearize(doc: &DocumentModel) -> String {
    let mut lines: Vec<String> = vec![doc.title.clone()];
    if !doc.abstract_text.is_empty() {
        lines.push(doc.abstract_text.clone());
    }
    for block in doc.blocks() {
        match block {
            Block::Section(s) => {
                if !s.heading.is_empty() {
                    lines.push(s.heading.clone());
                }
                lines.extend(s.paragraphs.iter().cloned());
            }
            Block::Table(t) => {
                if !t.caption.is_empty() {
                    lines.push(t.caption.clone());
                }
                lines.extend(t.rows.iter().map(|r| r.join(" | ")));
            }
        }
    }
    lines.join("\n")
}

const FILE_NAME_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_');

/// Percent-encoded DOI plus `extension`, e.g. `10.1016%2Fj.x.2019.json`.
pub fn doc_file_name(doi: &str, extension: &str) -> String {
    format!("{}.{}", utf8_percent_encode(doi, FILE_NAME_SET), extension)
}

/// Inverse of [`doc_file_name`] for the stem of a file name.
pub fn doi_from_file_stem(stem: &str) -> String {
    percent_decode_str(stem).decode_utf8_lossy().into_owned()
}
