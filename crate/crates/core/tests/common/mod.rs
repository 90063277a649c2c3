#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sciextract::corpus::{load_gold, DocumentModel};
use sciextract::postprocess::{ExtractedRecord, Provenance};
use sciextract::prompting::{build_prompt, render_exemplar, PromptMode};
use sciextract::ExtractionSchema;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn golden_doc(name: &str) -> DocumentModel {
    serde_json::from_str(&read_fixture(&format!("golden/docs/{name}.json"))).unwrap()
}

/// `(golden name, assembled prompt, golden text)` for zero- and one-shot
/// prompts of both bundled schemas.
pub fn golden_prompts() -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for name in ["mpea", "diffusion"] {
        let schema = ExtractionSchema::bundled(name).unwrap();
        let target = golden_doc(&format!("{name}_target"));
        let example = golden_doc(&format!("{name}_exemplar"));
        let gold = load_gold(&read_fixture(&format!("golden/gold_{name}.csv")), &schema, false).unwrap();
        let prov = Provenance { run_id: "golden".into(), mode: PromptMode::OneShot, chunk_index: None };
        let rows: Vec<ExtractedRecord> = gold.iter().map(|g| ExtractedRecord::from_gold(g, prov.clone())).collect();
        let exemplar = render_exemplar(&schema, &example, &rows).unwrap();

        let zero = build_prompt(&schema, &target, PromptMode::ZeroShot, None).unwrap();
        let one = build_prompt(&schema, &target, PromptMode::OneShot, Some(&exemplar)).unwrap();
        for (mode, bundle) in [("zero_shot", zero), ("one_shot", one)] {
            let file = format!("{name}_{mode}");
            out.push((file.clone(), bundle.prompt_text, read_fixture(&format!("golden/{file}.txt"))));
        }
    }
    out
}

pub mod lenient;
pub mod matching;
pub mod synthetic;
