use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use sciextract::corpus::GoldRecord;
use sciextract::postprocess::{ExtractedRecord, Provenance};
use sciextract::prompting::PromptMode;
use sciextract::{load_schema, CellValue, ExtractionSchema};

pub const TOL: f64 = 1e-6;

pub fn toy_schema() -> ExtractionSchema {
    load_schema(
        r#"{
        "name": "toy",
        "missing_token": "No information",
        "required_match_fields": ["formula", "yield strength"],
        "fields": [
            {"name": "formula", "kind": "text", "description": "alloy", "variance_class": "identifier"},
            {"name": "yield strength", "kind": "number", "unit": "MPa", "description": "YS", "variance_class": "related"},
            {"name": "phase", "kind": "text", "description": "phase", "variance_class": "related"},
            {"name": "hardness", "kind": "number", "unit": "HV", "description": "HV", "variance_class": "high_variance"},
            {"name": "test temperature", "kind": "number", "unit": "C", "description": "T", "variance_class": "low_variance"}
        ]
    }"#,
    )
    .unwrap()
}

/// Small value domains so that gates pass and scores tie often.
fn random_cells(rng: &mut impl Rng, extracted: bool) -> BTreeMap<String, CellValue> {
    let mut cells = BTreeMap::new();
    if rng.gen_bool(0.92) {
        let f = ["NbTaTi", "HfNbZr", "CrMoW"][rng.gen_range(0..3)];
        let f = if extracted && rng.gen_bool(0.3) { format!(" {} ", f.to_lowercase()) } else { f.to_string() };
        cells.insert("formula".into(), CellValue::Text(f));
    }
    if rng.gen_bool(0.92) {
        let ys = [100.0, 200.0, 300.0][rng.gen_range(0..3)];
        let cell = if extracted && rng.gen_bool(0.3) {
            CellValue::number(ys / 1000.0, Some("GPa"))
        } else {
            CellValue::number(ys, Some("MPa"))
        };
        cells.insert("yield strength".into(), cell);
    }
    if rng.gen_bool(0.6) {
        cells.insert("phase".into(), CellValue::Text(["BCC", "FCC"][rng.gen_range(0..2)].into()));
    }
    if rng.gen_bool(0.6) {
        cells.insert("hardness".into(), CellValue::number([400.0, 500.0][rng.gen_range(0..2)], Some("HV")));
    }
    if rng.gen_bool(0.6) {
        cells.insert("test temperature".into(), CellValue::number([25.0, 800.0][rng.gen_range(0..2)], Some("C")));
    }
    cells
}

pub struct Instance {
    pub doc_id: String,
    pub gold: Vec<GoldRecord>,
    pub extracted: Vec<ExtractedRecord>,
}

pub fn random_instance(rng: &mut impl Rng, doc_id: &str, max_gold: usize, max_extracted: usize) -> Instance {
    let schema = toy_schema();
    let gold = (0..rng.gen_range(0..=max_gold))
        .map(|i| {
            let mut cells = random_cells(rng, false);
            for f in &schema.fields {
                cells.entry(f.name.clone()).or_insert(CellValue::Missing);
            }
            GoldRecord { row_id: format!("g{i:02}"), doc_id: doc_id.into(), cells }
        })
        .collect();
    let extracted = (0..rng.gen_range(0..=max_extracted))
        .map(|i| ExtractedRecord {
            record_id: format!("{doc_id}::{i}"),
            doc_id: doc_id.into(),
            cells: random_cells(rng, true),
            provenance: Provenance { run_id: "t".into(), mode: PromptMode::ZeroShot, chunk_index: None },
        })
        .collect();
    Instance { doc_id: doc_id.into(), gold, extracted }
}

pub fn shuffled(inst: &Instance, rng: &mut impl Rng) -> Instance {
    let mut gold = inst.gold.clone();
    let mut extracted = inst.extracted.clone();
    gold.shuffle(rng);
    extracted.shuffle(rng);
    Instance { doc_id: inst.doc_id.clone(), gold, extracted }
}

/// Independent cell agreement for the toy schema's value domains.
pub fn oracle_agree(a: &CellValue, b: &CellValue) -> bool {
    let in_mpa = |v: f64, unit: &Option<String>| match unit.as_deref() {
        Some("GPa") => v * 1000.0,
        _ => v,
    };
    match (a, b) {
        (CellValue::Text(x), CellValue::Text(y)) => {
            x.trim().to_lowercase() == y.trim().to_lowercase()
        }
        (CellValue::Number { value: x, unit: ux }, CellValue::Number { value: y, unit: uy }) => {
            let (x, y) = (in_mpa(*x, ux), in_mpa(*y, uy));
            (x - y).abs() <= TOL * x.abs().max(y.abs())
        }
        _ => false,
    }
}

fn cell<'a>(cells: &'a BTreeMap<String, CellValue>, name: &str) -> &'a CellValue {
    cells.get(name).unwrap_or(&CellValue::Missing)
}

pub fn oracle_gate(g: &GoldRecord, e: &ExtractedRecord) -> bool {
    ["formula", "yield strength"]
        .iter()
        .all(|f| oracle_agree(cell(&g.cells, f), cell(&e.cells, f)))
}

pub fn oracle_score(g: &GoldRecord, e: &ExtractedRecord) -> f64 {
    let names = ["formula", "yield strength", "phase", "hardness", "test temperature"];
    let populated = names.iter().filter(|n| !cell(&g.cells, n).is_missing()).count();
    let agree = names
        .iter()
        .filter(|n| oracle_agree(cell(&g.cells, n), cell(&e.cells, n)))
        .count();
    if populated == 0 {
        0.0
    } else {
        agree as f64 / populated as f64
    }
}

/// Repeatedly takes the best remaining gated pair (score descending, then
/// gold id, then extracted id) until none is left.
pub fn reference_greedy(inst: &Instance) -> Vec<(String, String, f64)> {
    let mut free_gold: Vec<&GoldRecord> = inst.gold.iter().collect();
    let mut free_ext: Vec<&ExtractedRecord> = inst.extracted.iter().collect();
    let mut out = Vec::new();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for (gi, g) in free_gold.iter().enumerate() {
            for (ei, e) in free_ext.iter().enumerate() {
                if !oracle_gate(g, e) {
                    continue;
                }
                let s = oracle_score(g, e);
                let better = match best {
                    None => true,
                    Some((bg, be, bs)) => {
                        s > bs
                            || (s == bs
                                && (g.row_id.as_str(), e.record_id.as_str())
                                    < (free_gold[bg].row_id.as_str(), free_ext[be].record_id.as_str()))
                    }
                };
                if better {
                    best = Some((gi, ei, s));
                }
            }
        }
        let Some((gi, ei, s)) = best else { break };
        out.push((free_gold[gi].row_id.clone(), free_ext[ei].record_id.clone(), s));
        free_gold.remove(gi);
        free_ext.remove(ei);
    }
    out
}

/// Maximum total score over all matchings of gated pairs, by dynamic
/// programming over subsets of extracted rows. Needs at most 16 extracted.
pub fn exhaustive_max_weight(inst: &Instance) -> f64 {
    let n = inst.extracted.len();
    assert!(n <= 16);
    let mut best = vec![f64::NEG_INFINITY; 1 << n];
    best[0] = 0.0;
    for g in &inst.gold {
        let mut next = best.clone();
        for (mask, &here) in best.iter().enumerate() {
            if here == f64::NEG_INFINITY {
                continue;
            }
            for (j, e) in inst.extracted.iter().enumerate() {
                if mask & (1 << j) == 0 && oracle_gate(g, e) {
                    let m = mask | (1 << j);
                    next[m] = next[m].max(here + oracle_score(g, e));
                }
            }
        }
        best = next;
    }
    best.into_iter().fold(0.0, f64::max)
}
