use std::collections::{BTreeMap, HashSet};

use serde_json::Value;

use super::CorpusError;
use crate::schema::{CellValue, ExtractionSchema};

/// One curated dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub row_id: String,
    pub doc_id: String,
    /// Every schema field, `Missing` where the dataset has no value.
    pub cells: BTreeMap<String, CellValue>,
}

impl GoldRecord {
    pub fn cell(&self, field: &str) -> &CellValue {
        self.cells.get(field).unwrap_or(&CellValue::Missing)
    }
}

/// Reads a gold dataset CSV. The header must hold a `doi` column, an
/// optional `row_id` column, and otherwise only schema field names. Empty
/// cells are missing values.
pub fn load_gold(
    csv_text: &str,
    schema: &ExtractionSchema,
    coerce_invalid_to_missing: bool,
) -> Result<Vec<GoldRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();

    let mut doi_col = None;
    let mut row_id_col = None;
    let mut field_cols = Vec::new();
    let mut unknown = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h.eq_ignore_ascii_case("doi") {
            doi_col = Some(i);
        } else if h.eq_ignore_ascii_case("row_id") {
            row_id_col = Some(i);
        } else if let Some(spec) = schema.resolve_key(h) {
            field_cols.push((i, spec));
        } else {
            unknown.push(h.to_string());
        }
    }
    if !unknown.is_empty() {
        return Err(CorpusError::UnknownColumns(unknown));
    }
    let doi_col = doi_col.ok_or(CorpusError::NoDoiColumn)?;

    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(n as u64 + 2, |p| p.line());
        let doi = row.get(doi_col).unwrap_or("").trim();
        if doi.is_empty() {
            return Err(CorpusError::Row {
                line,
                message: "missing doi".into(),
            });
        }
        let row_id = row_id_col
            .and_then(|c| row.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("g{:05}", n + 1));
        if !seen_ids.insert(row_id.clone()) {
            return Err(CorpusError::Row {
                line,
                message: format!("duplicate row_id `{row_id}`"),
            });
        }

        let mut cells: BTreeMap<String, CellValue> = schema
            .fields
            .iter()
            .map(|f| (f.name.clone(), CellValue::Missing))
            .collect();
        for (col, spec) in &field_cols {
            let raw = row.get(*col).unwrap_or("");
            if raw.trim().is_empty() {
                continue;
            }
            let cell = match schema.normalize(spec, &Value::String(raw.to_string())) {
                Ok(cell) => cell,
                Err(e) if coerce_invalid_to_missing => {
                    log::warn!("gold line {line}: {e}; treating as missing");
                    CellValue::Missing
                }
                Err(e) => {
                    return Err(CorpusError::Row {
                        line,
                        message: e.to_string(),
                    })
                }
            };
            cells.insert(spec.name.clone(), cell);
        }
        records.push(GoldRecord {
            row_id,
            doc_id: doi.to_string(),
            cells,
        });
    }
    Ok(records)
}
