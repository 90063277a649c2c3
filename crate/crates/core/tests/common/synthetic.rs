//! A small synthetic MPEA corpus with gold rows and canned model responses.

use std::path::{Path, PathBuf};

use chrono::DateTime;
use clap::Parser;
use sciextract::backend::{RawResponse, RequestParams, ResponseCache};
use sciextract::cli::{Cli, Command, EvaluateArgs, ExtractArgs, IngestArgs};
use sciextract::corpus::{to_tei, DocumentModel, Section, TableBlock};
use sciextract::prompting::{build_prompt, PromptMode};
use sciextract::ExtractionSchema;

const ALLOYS: [&str; 4] = ["NbTaTiV", "HfNbTaZr", "CrMoNbW", "AlCoCrFeNi"];

pub fn doc_id(k: usize) -> String {
    format!("10.5555/synth.{k}")
}

pub fn documents(n: usize) -> Vec<DocumentModel> {
    (0..n)
        .map(|k| {
            let rows: Vec<Vec<String>> = std::iter::once(vec!["Alloy".into(), "YS (MPa)".into(), "HV".into()])
                .chain((0..3).map(|r| {
                    vec![
                        format!("{}{}", ALLOYS[(k + r) % 4], r),
                        format!("{}", 800 + 100 * r + k),
                        format!("{}", 400 + 10 * r),
                    ]
                }))
                .collect();
            DocumentModel {
                doc_id: doc_id(k),
                title: format!("Mechanical properties of alloy series {k}"),
                abstract_text: format!("We report compression tests on three alloys of series {k} at 25 °C."),
                sections: vec![
                    Section {
                        heading: "Methods".into(),
                        paragraphs: vec!["Samples were arc melted and annealed.".into()],
                    },
                    Section {
                        heading: "Results".into(),
                        paragraphs: vec![format!("The alloys of series {k} all have a BCC structure.")],
                    },
                ],
                tables: vec![TableBlock {
                    caption: format!("Table 1. Compressive properties of series {k}."),
                    rows,
                    source_position: 1,
                }],
                year: Some(2000 + k as i32),
            }
        })
        .collect()
}

pub fn gold_csv(n: usize) -> String {
    let mut out = String::from("doi,row_id,high entropy alloy formula,BCC/FCC/other,hardness,yield strength,test temperature\n");
    for k in 0..n {
        for r in 0..3 {
            out.push_str(&format!(
                "{},{k}-{r},{}{r},BCC,{},{},25\n",
                doc_id(k),
                ALLOYS[(k + r) % 4],
                400 + 10 * r,
                800 + 100 * r + k
            ));
        }
    }
    out
}

/// Two correct records (one with the strength in GPa), one with a wrong
/// strength, and one invented alloy; wrapped the way chat models answer.
pub fn response(k: usize) -> String {
    let a = |r: usize| format!("{}{r}", ALLOYS[(k + r) % 4]);
    format!(
        "Here are the extracted records:\n```json\n[\n  {{\"high entropy alloy formula\": '{}', \"yield strength\": {}, \"hardness\": 400.0, \"BCC/FCC/other\": \"BCC\", \"test temperature\": 25.0}},\n  {{\"high entropy alloy formula\": \"{}\", \"yield strength\": \"{} GPa\", \"hardness\": \"No information\"}}, // unit as printed\n  {{\"high entropy alloy formula\": \"{}\", \"yield strength\": 1.0, \"grain size\": 12}},\n  {{\"high entropy alloy formula\": \"Fe{k}Ni\", \"yield strength\": 500, \"colour\": \"grey\"}},\n]\n```\n",
        a(0),
        800 + k,
        a(1),
        (900 + k) as f64 / 1000.0,
        a(2)
    )
}

pub struct Workspace {
    pub root: tempfile::TempDir,
}

impl Workspace {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.path().join(rel)
    }
}

/// TEI files, a gold CSV and a replay cache holding one zero-shot response
/// per document.
pub fn workspace(n: usize) -> Workspace {
    let root = tempfile::tempdir().unwrap();
    let tei = root.path().join("tei");
    std::fs::create_dir_all(&tei).unwrap();
    let schema = ExtractionSchema::mpea();
    let params = RequestParams::default();
    let cache = ResponseCache::new(root.path().join("cache"));
    for (k, doc) in documents(n).iter().enumerate() {
        std::fs::write(tei.join(format!("paper{k}.xml")), to_tei(doc)).unwrap();
        let bundle = build_prompt(&schema, doc, PromptMode::ZeroShot, None).unwrap();
        let request = params.request(&bundle.prompt_text).unwrap();
        let reply = RawResponse {
            text: response(k),
            model_id: params.model_id.clone(),
            finish_reason: "stop".into(),
            created_at: DateTime::UNIX_EPOCH,
            from_cache: false,
        };
        cache.put(&request, &reply).unwrap();
    }
    std::fs::write(root.path().join("gold.csv"), gold_csv(n)).unwrap();
    Workspace { root }
}

fn parse(args: &[&str]) -> Command {
    let mut argv = vec!["sciextract"];
    argv.extend_from_slice(args);
    Cli::try_parse_from(argv).unwrap().command
}

pub fn ingest_args(corpus: &Path, out: &Path) -> IngestArgs {
    match parse(&["ingest", "--corpus", &s(corpus), "--out", &s(out)]) {
        Command::Ingest(a) => a,
        _ => unreachable!(),
    }
}

pub fn extract_args(extra: &[&str]) -> ExtractArgs {
    let mut args = vec!["extract"];
    args.extend_from_slice(extra);
    match parse(&args) {
        Command::Extract(a) => *a,
        _ => unreachable!(),
    }
}

pub fn evaluate_args(extra: &[&str]) -> EvaluateArgs {
    let mut args = vec!["evaluate"];
    args.extend_from_slice(extra);
    match parse(&args) {
        Command::Evaluate(a) => a,
        _ => unreachable!(),
    }
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}
