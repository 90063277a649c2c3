//! Model output to validated records: fence stripping, lenient parsing,
//! schema coercion, and merging of chunk-level results.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::align::values_agree;
use crate::corpus::GoldRecord;
use crate::json::{parse_lenient_json, JsonError};
use crate::prompting::PromptMode;
use crate::schema::{CellValue, CoercionError, ExtractionSchema};

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("response is not JSON: {0}")]
    Json(#[from] JsonError),
    #[error("unexpected response structure: {0}")]
    Structure(String),
    #[error("record {index}: {source}")]
    Coercion {
        index: usize,
        #[source]
        source: CoercionError,
    },
    #[error("malformed record line: {0}")]
    Record(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub mode: PromptMode,
    pub chunk_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedRecord {
    pub record_id: String,
    pub doc_id: String,
    pub cells: BTreeMap<String, CellValue>,
    pub provenance: Provenance,
}

impl ExtractedRecord {
    pub fn cell(&self, field: &str) -> &CellValue {
        self.cells.get(field).unwrap_or(&CellValue::Missing)
    }

    /// A gold row recast as an extraction, e.g. to serve as an exemplar.
    pub fn from_gold(gold: &GoldRecord, provenance: Provenance) -> Self {
        Self {
            record_id: gold.row_id.clone(),
            doc_id: gold.doc_id.clone(),
            cells: gold
                .cells
                .iter()
                .filter(|(_, c)| !c.is_missing())
                .map(|(k, c)| (k.clone(), c.clone()))
                .collect(),
            provenance,
        }
    }

    /// Record-file form: every schema field in schema order, `null` for missing.
    pub fn to_json(&self, schema: &ExtractionSchema) -> Value {
        let cells: Map<String, Value> = schema
            .fields
            .iter()
            .map(|f| (f.name.clone(), self.cell(&f.name).to_json(f)))
            .collect();
        serde_json::json!({
            "record_id": self.record_id,
            "doc_id": self.doc_id,
            "cells": cells,
            "provenance": self.provenance,
        })
    }

    pub fn from_json(value: &Value, schema: &ExtractionSchema) -> Result<Self, PostprocessError> {
        let bad = |m: &str| PostprocessError::Record(m.to_string());
        let text = |k: &str| {
            value
                .get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("missing `{k}`")))
        };
        let provenance: Provenance = serde_json::from_value(
            value.get("provenance").cloned().ok_or_else(|| bad("missing `provenance`"))?,
        )
        .map_err(|e| bad(&e.to_string()))?;
        let raw_cells = value
            .get("cells")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing `cells`"))?;
        let mut cells = BTreeMap::new();
        for (k, v) in raw_cells {
            let spec = schema
                .field(k)
                .ok_or_else(|| bad(&format!("unknown field `{k}`")))?;
            let cell = schema
                .normalize(spec, v)
                .map_err(|e| PostprocessError::Coercion { index: 0, source: e })?;
            if !cell.is_missing() {
                cells.insert(k.clone(), cell);
            }
        }
        Ok(Self {
            record_id: text("record_id")?,
            doc_id: text("doc_id")?,
            cells,
            provenance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    MultipleFences,
    BareJsonScan,
    UnknownKey,
    DuplicateKey,
    Coercion,
    MergeConflict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Warning {
    pub doc_id: String,
    pub chunk_index: Option<usize>,
    pub record_id: Option<String>,
    pub kind: WarningKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PostprocessOptions {
    /// Fall back to the first balanced `[...]`/`{...}` when the text does not parse.
    pub scan_bare_json: bool,
    pub coerce_invalid_to_missing: bool,
}

/// Result of looking for a fenced code block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FenceStrip {
    pub content: String,
    pub fenced: bool,
    /// Fenced blocks after the first one, which are ignored.
    pub extra_blocks: usize,
}

const FENCE: &str = "```";

fn open_fence(text: &str) -> Option<(usize, usize)> {
    let start = text.find(FENCE)?;
    let after = &text[start + FENCE.len()..];
    let tag_len = after
        .find(|c: char| !c.is_ascii_alphanumeric())
        .unwrap_or(after.len());
    let body = if tag_len > 0 && after[tag_len..].starts_with(char::is_whitespace) {
        start + FENCE.len() + tag_len
    } else {
        start + FENCE.len()
    };
    Some((start, body))
}

pub fn strip_fences_detailed(text: &str) -> FenceStrip {
    let unchanged = FenceStrip {
        content: text.to_string(),
        fenced: false,
        extra_blocks: 0,
    };
    let Some((_, body)) = open_fence(text) else {
        return unchanged;
    };
    let Some(len) = text[body..].find(FENCE) else {
        return unchanged;
    };
    let mut extra_blocks = 0;
    let mut rest = &text[body + len + FENCE.len()..];
    while let Some((_, b)) = open_fence(rest) {
        match rest[b..].find(FENCE) {
            Some(l) => {
                extra_blocks += 1;
                rest = &rest[b + l + FENCE.len()..];
            }
            None => break,
        }
    }
    FenceStrip {
        content: text[body..body + len].trim().to_string(),
        fenced: true,
        extra_blocks,
    }
}

/// Contents of the first ``` fenced block (language tag dropped), or the
/// input unchanged when there is no complete fence.
pub fn strip_fences(text: &str) -> String {
    strip_fences_detailed(text).content
}

/// The first bracketed JSON-looking span, matched with string awareness.
pub fn scan_bare_json(text: &str) -> Option<&str> {
    let start = text.find(['[', '{'])?;
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn warning(doc_id: &str, provenance: &Provenance, kind: WarningKind, message: String) -> Warning {
    Warning {
        doc_id: doc_id.to_string(),
        chunk_index: provenance.chunk_index,
        record_id: None,
        kind,
        message,
    }
}

/// Fence stripping plus lenient parsing of one response.
pub fn parse_response(
    text: &str,
    doc_id: &str,
    provenance: &Provenance,
    options: &PostprocessOptions,
) -> Result<(Value, Vec<Warning>), PostprocessError> {
    let mut warnings = Vec::new();
    let strip = strip_fences_detailed(text);
    if strip.extra_blocks > 0 {
        warnings.push(warning(
            doc_id,
            provenance,
            WarningKind::MultipleFences,
            format!("{} further fenced block(s) ignored", strip.extra_blocks),
        ));
    }
    match parse_lenient_json(&strip.content) {
        Ok(v) => Ok((v, warnings)),
        Err(e) if options.scan_bare_json => {
            let span = scan_bare_json(&strip.content).ok_or(e)?;
            let v = parse_lenient_json(span)?;
            warnings.push(warning(
                doc_id,
                provenance,
                WarningKind::BareJsonScan,
                "JSON recovered from surrounding prose".into(),
            ));
            Ok((v, warnings))
        }
        Err(e) => Err(e.into()),
    }
}

/// One record per object of a top-level array, or one for a lone object.
pub fn to_records(
    value: &Value,
    schema: &ExtractionSchema,
    doc_id: &str,
    provenance: &Provenance,
    options: &PostprocessOptions,
) -> Result<(Vec<ExtractedRecord>, Vec<Warning>), PostprocessError> {
    let objects: Vec<&Map<String, Value>> = match value {
        Value::Object(o) => vec![o],
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_object().ok_or_else(|| {
                    PostprocessError::Structure(format!("array element {i} is not an object"))
                })
            })
            .collect::<Result<_, _>>()?,
        other => {
            return Err(PostprocessError::Structure(format!(
                "expected an array of objects or an object, found {}",
                kind_name(other)
            )))
        }
    };

    let mut records = Vec::with_capacity(objects.len());
    let mut warnings = Vec::new();
    for (i, object) in objects.into_iter().enumerate() {
        let record_id = match provenance.chunk_index {
            Some(c) => format!("{doc_id}::c{c}::{i}"),
            None => format!("{doc_id}::{i}"),
        };
        let mut note = |kind, message: String| {
            warnings.push(Warning {
                record_id: Some(record_id.clone()),
                ..warning(doc_id, provenance, kind, message)
            })
        };
        let mut cells = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (key, raw) in object {
            let Some(spec) = schema.resolve_key(key) else {
                note(WarningKind::UnknownKey, format!("dropped unknown key `{key}`"));
                continue;
            };
            if !seen.insert(spec.name.as_str()) {
                note(
                    WarningKind::DuplicateKey,
                    format!("`{key}` repeats field `{}`; first value kept", spec.name),
                );
                continue;
            }
            let cell = match schema.normalize(spec, raw) {
                Ok(cell) => cell,
                Err(e) if options.coerce_invalid_to_missing => {
                    note(WarningKind::Coercion, e.to_string());
                    CellValue::Missing
                }
                Err(e) => return Err(PostprocessError::Coercion { index: i, source: e }),
            };
            if !cell.is_missing() {
                cells.insert(spec.name.clone(), cell);
            }
        }
        records.push(ExtractedRecord {
            record_id,
            doc_id: doc_id.to_string(),
            cells,
            provenance: provenance.clone(),
        });
    }
    Ok((records, warnings))
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Folds records of overlapping chunks together. A record joins the first
/// earlier record that has not yet absorbed anything from its chunk and
/// agrees with it on every required field; missing cells are filled and
/// conflicting ones keep the earlier value.
pub fn merge_chunk_records(
    per_chunk: &[Vec<ExtractedRecord>],
    schema: &ExtractionSchema,
    numeric_rel_tol: f64,
) -> (Vec<ExtractedRecord>, Vec<Warning>) {
    let mut merged: Vec<(ExtractedRecord, BTreeSet<usize>)> = Vec::new();
    let mut warnings = Vec::new();
    for (chunk, records) in per_chunk.iter().enumerate() {
        for record in records {
            let target = merged.iter_mut().find(|(m, chunks)| {
                !chunks.contains(&chunk)
                    && schema
                        .required_fields()
                        .all(|f| values_agree(f, m.cell(&f.name), record.cell(&f.name), numeric_rel_tol))
            });
            let Some((into, chunks)) = target else {
                merged.push((record.clone(), BTreeSet::from([chunk])));
                continue;
            };
            chunks.insert(chunk);
            for f in &schema.fields {
                let incoming = record.cell(&f.name);
                if incoming.is_missing() {
                    continue;
                }
                let current = into.cell(&f.name);
                if current.is_missing() {
                    into.cells.insert(f.name.clone(), incoming.clone());
                } else if !values_agree(f, current, incoming, numeric_rel_tol) {
                    warnings.push(Warning {
                        doc_id: into.doc_id.clone(),
                        chunk_index: record.provenance.chunk_index,
                        record_id: Some(into.record_id.clone()),
                        kind: WarningKind::MergeConflict,
                        message: format!(
                            "`{}`: kept {current} over {incoming} from {}",
                            f.name, record.record_id
                        ),
                    });
                }
            }
        }
    }
    (merged.into_iter().map(|(r, _)| r).collect(), warnings)
}
