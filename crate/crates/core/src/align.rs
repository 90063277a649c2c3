//! Per-paper pairing of gold and extracted rows.
//!
//! Two rows are candidates only when they agree on every required field.
//! Candidates are scored by the share of the gold row's populated fields the
//! extracted row reproduces, then paired greedily from the highest score
//! down. Unpaired gold rows are misses; unpaired extracted rows are
//! hallucinations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::GoldRecord;
use crate::postprocess::ExtractedRecord;
use crate::schema::{convert_unit, CellValue, ExtractionSchema, FieldSpec, Unit};

pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldAgreement {
    Agree,
    Disagree,
    GoldMissing,
    ExtractedMissing,
    BothMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub gold_id: String,
    pub extracted_id: String,
    pub score: f64,
    pub field_agreements: BTreeMap<String, FieldAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentOutcome {
    pub doc_id: String,
    pub pairs: Vec<PairScore>,
    pub missed_gold: Vec<String>,
    pub hallucinated: Vec<String>,
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Cell equality. Missing never agrees. Numbers are compared at relative
/// tolerance, converting `b` into `a`'s unit when both units are in the
/// conversion table; two different units outside it never agree. Text is
/// compared case-insensitively with whitespace collapsed.
pub fn values_agree(_spec: &FieldSpec, a: &CellValue, b: &CellValue, numeric_rel_tol: f64) -> bool {
    match (a, b) {
        (
            CellValue::Number { value: x, unit: ua },
            CellValue::Number { value: y, unit: ub },
        ) => match (ua, ub) {
            (Some(ua), Some(ub)) if ua != ub => {
                if Unit::parse(ua).is_none() || Unit::parse(ub).is_none() {
                    return false;
                }
                match convert_unit(*y, ub, ua) {
                    Ok(y) => close(*x, y, numeric_rel_tol),
                    Err(_) => false,
                }
            }
            _ => close(*x, *y, numeric_rel_tol),
        },
        (CellValue::Text(s), CellValue::Text(t)) => {
            let norm = |v: &str| v.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            norm(s) == norm(t)
        }
        _ => false,
    }
}

/// True iff every required field is populated on both sides and agrees.
pub fn gate(
    gold: &GoldRecord,
    extracted: &ExtractedRecord,
    schema: &ExtractionSchema,
    numeric_rel_tol: f64,
) -> bool {
    schema
        .required_fields()
        .all(|f| values_agree(f, gold.cell(&f.name), extracted.cell(&f.name), numeric_rel_tol))
}

pub fn pair_score(
    gold: &GoldRecord,
    extracted: &ExtractedRecord,
    schema: &ExtractionSchema,
    numeric_rel_tol: f64,
) -> PairScore {
    let mut agree = 0usize;
    let mut populated = 0usize;
    let field_agreements = schema
        .fields
        .iter()
        .map(|f| {
            let (g, e) = (gold.cell(&f.name), extracted.cell(&f.name));
            let a = match (g.is_missing(), e.is_missing()) {
                (true, true) => FieldAgreement::BothMissing,
                (true, false) => FieldAgreement::GoldMissing,
                (false, true) => FieldAgreement::ExtractedMissing,
                (false, false) if values_agree(f, g, e, numeric_rel_tol) => FieldAgreement::Agree,
                (false, false) => FieldAgreement::Disagree,
            };
            if !g.is_missing() {
                populated += 1;
            }
            if a == FieldAgreement::Agree {
                agree += 1;
            }
            (f.name.clone(), a)
        })
        .collect();
    PairScore {
        gold_id: gold.row_id.clone(),
        extracted_id: extracted.record_id.clone(),
        score: if populated == 0 {
            0.0
        } else {
            agree as f64 / populated as f64
        },
        field_agreements,
    }
}

/// Candidate order: score descending, then gold id, then extracted id.
pub fn candidate_order(a: &PairScore, b: &PairScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.gold_id.cmp(&b.gold_id))
        .then_with(|| a.extracted_id.cmp(&b.extracted_id))
}

/// Greedy selection over scored candidates: walk them best-first and keep
/// each pair whose rows are both still free.
pub fn select_greedy(mut candidates: Vec<PairScore>) -> Vec<PairScore> {
    candidates.sort_by(candidate_order);
    let mut used_gold = HashSet::new();
    let mut used_extracted = HashSet::new();
    candidates
        .into_iter()
        .filter(|c| {
            if used_gold.contains(&c.gold_id) || used_extracted.contains(&c.extracted_id) {
                return false;
            }
            used_gold.insert(c.gold_id.clone());
            used_extracted.insert(c.extracted_id.clone());
            true
        })
        .collect()
}

pub fn greedy_align(
    doc_id: &str,
    gold_rows: &[&GoldRecord],
    extracted_rows: &[&ExtractedRecord],
    schema: &ExtractionSchema,
    numeric_rel_tol: f64,
) -> AlignmentOutcome {
    let mut candidates = Vec::new();
    for g in gold_rows {
        for e in extracted_rows {
            if gate(g, e, schema, numeric_rel_tol) {
                candidates.push(pair_score(g, e, schema, numeric_rel_tol));
            }
        }
    }
    let pairs = select_greedy(candidates);
    let paired_gold: HashSet<&str> = pairs.iter().map(|p| p.gold_id.as_str()).collect();
    let paired_extracted: HashSet<&str> = pairs.iter().map(|p| p.extracted_id.as_str()).collect();
    let mut missed_gold: Vec<String> = gold_rows
        .iter()
        .filter(|g| !paired_gold.contains(g.row_id.as_str()))
        .map(|g| g.row_id.clone())
        .collect();
    let mut hallucinated: Vec<String> = extracted_rows
        .iter()
        .filter(|e| !paired_extracted.contains(e.record_id.as_str()))
        .map(|e| e.record_id.clone())
        .collect();
    missed_gold.sort();
    hallucinated.sort();
    AlignmentOutcome {
        doc_id: doc_id.to_string(),
        pairs,
        missed_gold,
        hallucinated,
    }
}

/// Groups rows by paper and aligns each paper independently. Outcomes are
/// ordered by doc id.
pub fn align_corpus(
    gold: &[GoldRecord],
    extracted: &[ExtractedRecord],
    schema: &ExtractionSchema,
    numeric_rel_tol: f64,
) -> Vec<AlignmentOutcome> {
    type Rows<'a> = (Vec<&'a GoldRecord>, Vec<&'a ExtractedRecord>);
    let mut papers: BTreeMap<&str, Rows> = BTreeMap::new();
    for g in gold {
        papers.entry(&g.doc_id).or_default().0.push(g);
    }
    for e in extracted {
        papers.entry(&e.doc_id).or_default().1.push(e);
    }
    papers
        .into_par_iter()
        .map(|(doc_id, (g, e))| greedy_align(doc_id, &g, &e, schema, numeric_rel_tol))
        .collect()
}
