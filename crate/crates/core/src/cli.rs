//! Command-line front end. Each stage is its own subcommand and hands off
//! through files: `ingest` writes document JSON, `extract` writes records,
//! `evaluate` writes alignment and reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{align_corpus, DEFAULT_REL_TOL};
use crate::backend::{
    run_extraction, BackendError, CompletionBackend, LiveBackend, LiveConfig, MockBackend,
    ReplayBackend, RequestParams, ResponseCache, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT,
    DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL,
};
use crate::corpus::{
    doc_file_name, load_gold, parse_tei_with, ChunkConfig, DocumentModel, GoldRecord,
    ParseOptions, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP_FRACTION,
};
use crate::evaluate::{
    breakdowns, format_breakdown_csv, load_annotations, metrics_report, property_csv,
    reason_breakdown_csv, summary_csv,
};
use crate::postprocess::{
    merge_chunk_records, parse_response, to_records, ExtractedRecord, PostprocessOptions,
    Provenance, Warning,
};
use crate::prompting::{
    build_chunked_prompts_with, build_prompt_with, render_exemplar, PromptBundle, PromptMode,
    PromptTemplates,
};
use crate::schema::{load_schema, ExtractionSchema};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Transport(_) => EXIT_IO,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn config<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "sciextract", version, about = "Schema-based extraction of property tables from scientific papers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a directory of TEI XML files into document JSON.
    Ingest(IngestArgs),
    /// Prompt a backend for every document and write the extracted records.
    Extract(Box<ExtractArgs>),
    /// Align records with the gold dataset and write metrics.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep acknowledgement and annex sections.
    #[arg(long)]
    pub include_back_matter: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    #[value(name = "zero_shot", alias = "zero-shot")]
    ZeroShot,
    #[value(name = "one_shot", alias = "one-shot")]
    OneShot,
    Chunked,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ZeroShot => PromptMode::ZeroShot,
            ModeArg::OneShot => PromptMode::OneShot,
            ModeArg::Chunked => PromptMode::Chunked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Schema config file, or the name of a bundled schema (`mpea`, `diffusion`).
    #[arg(long)]
    pub schema: String,
    /// Directory of document JSON (from `ingest`) or TEI XML files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gold CSV; needed for one-shot mode to build the exemplar.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "zero_shot")]
    pub mode: ModeArg,
    /// DOI of the exemplar paper; it is left out of the targets.
    #[arg(long)]
    pub exemplar: Option<String>,
    #[arg(long, value_enum, default_value = "replay")]
    pub backend: BackendKind,
    /// Response cache directory [default: <out>/cache].
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// JSON script for the mock backend. Keys are request hashes, doc ids,
    /// or `<doc id>::c<chunk>`.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_OUTPUT_TOKENS)]
    pub max_tokens: u32,
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP_FRACTION)]
    pub overlap: f64,
    /// Relative tolerance for numeric agreement when merging chunk records.
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Output subdirectory name [default: hash of the run configuration].
    #[arg(long)]
    pub run_id: Option<String>,
    /// Ignore cached responses (live backend; responses are still cached).
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub scan_bare_json: bool,
    #[arg(long)]
    pub coerce_invalid_to_missing: bool,
    /// Replacement whole-document instruction template.
    #[arg(long)]
    pub instruction_template: Option<PathBuf>,
    /// Replacement chunked-mode instruction template.
    #[arg(long)]
    pub chunked_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub schema: String,
    /// records.jsonl, or the run directory holding it.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub tol: f64,
    /// Label for the summary CSV row [default: the records' run id].
    #[arg(long)]
    pub method: Option<String>,
    /// Score against every gold row, not only the papers the run targeted.
    #[arg(long)]
    pub all_gold: bool,
    #[arg(long)]
    pub coerce_invalid_to_missing: bool,
    /// Report directory [default: the records' directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    let code = match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code)
}

pub fn run(command: &Command) -> Result<u8, CliError> {
    match command {
        Command::Ingest(a) => {
            let s = cmd_ingest(a)?;
            println!("parsed {} of {} files", s.parsed, s.parsed + s.failed);
            Ok(if s.failed == 0 { EXIT_OK } else { EXIT_PARTIAL })
        }
        Command::Extract(a) => {
            let s = cmd_extract(a)?;
            println!(
                "{}: {} of {} documents, {} records -> {}",
                s.run_id,
                s.succeeded,
                s.documents.len(),
                s.records,
                s.run_dir.display()
            );
            Ok(s.exit_code())
        }
        Command::Evaluate(a) => {
            let s = cmd_evaluate(a)?;
            println!(
                "matched {} missed {} hallucinated {} recall {} precision {}",
                s.matched, s.missed, s.hallucinated, s.recall, s.precision
            );
            Ok(EXIT_OK)
        }
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| extensions.contains(&x))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// A schema config path, or the name of a bundled schema.
pub fn resolve_schema(arg: &str) -> Result<ExtractionSchema, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        return load_schema(&read(path)?).map_err(config(arg));
    }
    ExtractionSchema::bundled(arg)
        .ok_or_else(|| CliError::Config(format!("`{arg}` is neither a schema file nor a bundled schema")))
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestFailure {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub parsed: usize,
    pub failed: usize,
    pub documents: Vec<String>,
    pub failures: Vec<IngestFailure>,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestSummary, CliError> {
    let options = ParseOptions {
        include_back_matter: args.include_back_matter,
    };
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut failures = Vec::new();
    for path in sorted_files(&args.corpus, &["xml"])? {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let doc = match parse_tei_with(&read(&path)?, options) {
            Ok(doc) => doc,
            Err(e) => {
                log::warn!("{file}: {e}");
                failures.push(IngestFailure {
                    file,
                    error: e.to_string(),
                });
                continue;
            }
        };
        if let Some(first) = seen.get(&doc.doc_id) {
            let error = format!("DOI {} already read from {first}", doc.doc_id);
            log::warn!("{file}: {error}");
            failures.push(IngestFailure { file, error });
            continue;
        }
        let json = serde_json::to_string_pretty(&doc).expect("document serializes");
        write_atomic(&args.out.join(doc_file_name(&doc.doc_id, "json")), json.as_bytes())?;
        seen.insert(doc.doc_id, file);
    }
    let summary = IngestSummary {
        parsed: seen.len(),
        failed: failures.len(),
        documents: seen.into_keys().collect(),
        failures,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&args.out.join("ingest_summary.json"), json.as_bytes())?;
    Ok(summary)
}

/// Reads `*.json` documents and `*.xml` TEI files. Files that fail to load
/// are returned separately.
pub fn load_documents(dir: &Path) -> Result<(Vec<DocumentModel>, Vec<IngestFailure>), CliError> {
    let mut docs: BTreeMap<String, DocumentModel> = BTreeMap::new();
    let mut failures = Vec::new();
    for path in sorted_files(dir, &["json", "xml"])? {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if file == "ingest_summary.json" {
            continue;
        }
        let text = read(&path)?;
        let parsed = if file.ends_with(".xml") {
            parse_tei_with(&text, ParseOptions::default()).map_err(|e| e.to_string())
        } else {
            serde_json::from_str::<DocumentModel>(&text).map_err(|e| e.to_string())
        };
        match parsed {
            Ok(doc) if docs.contains_key(&doc.doc_id) => {
                return Err(CliError::Config(format!("{file}: DOI {} appears twice in the corpus", doc.doc_id)))
            }
            Ok(doc) => {
                docs.insert(doc.doc_id.clone(), doc);
            }
            Err(error) => {
                log::warn!("{file}: {error}");
                failures.push(IngestFailure { file, error });
            }
        }
    }
    Ok((docs.into_values().collect(), failures))
}

/// Everything that determines the content of an extraction run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub schema: String,
    pub schema_sha256: String,
    pub corpus_dir: String,
    pub gold_path: Option<String>,
    pub mode: ModeArg,
    pub exemplar_doc_id: Option<String>,
    pub backend: BackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub chunk_size: usize,
    pub overlap_fraction: f64,
    pub numeric_rel_tol: f64,
    pub scan_bare_json: bool,
    pub coerce_invalid_to_missing: bool,
    pub instruction_template_sha256: String,
    pub chunked_template_sha256: String,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunConfig {
    /// `run-` plus the first 12 hex digits of the config's SHA-256.
    pub fn default_run_id(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("run-{}", &sha256_hex(&canonical)[..12])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractSummary {
    pub run_id: String,
    #[serde(skip)]
    pub run_dir: PathBuf,
    pub config: RunConfig,
    /// Target documents, in processing order.
    pub documents: Vec<String>,
    pub succeeded: usize,
    pub records: usize,
    pub warnings: usize,
    pub failures: Vec<DocumentFailure>,
    pub unreadable_files: Vec<IngestFailure>,
    pub replay_misses: Vec<String>,
    #[serde(skip)]
    backend_failures: usize,
}

impl ExtractSummary {
    pub fn exit_code(&self) -> u8 {
        let failed = self.failures.len() + self.unreadable_files.len();
        if failed == 0 {
            EXIT_OK
        } else if self.succeeded == 0 && self.backend_failures > 0 {
            EXIT_IO
        } else {
            EXIT_PARTIAL
        }
    }
}

fn mock_backend(path: &Path, bundles: &[PromptBundle], requests: &HashMap<usize, String>) -> Result<MockBackend, CliError> {
    let mut mock = MockBackend::from_json(&read(path)?).map_err(config("mock script"))?;
    for (i, b) in bundles.iter().enumerate() {
        let alias = match b.chunk_index {
            Some(c) => format!("{}::c{c}", b.doc_id),
            None => b.doc_id.clone(),
        };
        let reply = mock
            .responses
            .get(&alias)
            .or_else(|| mock.responses.get(&b.doc_id))
            .cloned();
        if let Some(reply) = reply {
            mock.responses.entry(requests[&i].clone()).or_insert(reply);
        }
    }
    Ok(mock)
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<ExtractSummary, CliError> {
    let schema = resolve_schema(&args.schema)?;
    let mode = PromptMode::from(args.mode);
    let chunk_config = ChunkConfig::new(args.chunk_size, args.overlap).map_err(config("chunking"))?;
    match (mode, &args.exemplar) {
        (PromptMode::OneShot, None) => return Err(CliError::Config("one_shot mode needs --exemplar".into())),
        (PromptMode::ZeroShot | PromptMode::Chunked, Some(_)) => {
            return Err(CliError::Config(format!("--exemplar is only used in one_shot mode, not {}", mode.as_str())))
        }
        _ => {}
    }
    if args.parallelism == 0 {
        return Err(CliError::Config("--parallelism must be at least 1".into()));
    }
    let params = RequestParams {
        model_id: args.model.clone(),
        temperature: args.temperature,
        max_output_tokens: args.max_tokens,
    };
    params.request("").map_err(config("request parameters"))?;

    let mut templates = PromptTemplates::for_schema(&schema);
    if let Some(p) = &args.instruction_template {
        templates = templates.with_instruction(&read(p)?);
    }
    if let Some(p) = &args.chunked_template {
        templates = templates.with_chunked_instruction(&read(p)?);
    }

    let run_config = RunConfig {
        schema: schema.name.clone(),
        schema_sha256: sha256_hex(&serde_json::to_string(&schema).expect("schema serializes")),
        corpus_dir: args.corpus.display().to_string(),
        gold_path: args.gold.as_ref().map(|p| p.display().to_string()),
        mode: args.mode,
        exemplar_doc_id: args.exemplar.clone(),
        backend: args.backend,
        model_id: args.model.clone(),
        temperature: args.temperature,
        max_output_tokens: args.max_tokens,
        chunk_size: args.chunk_size,
        overlap_fraction: args.overlap,
        numeric_rel_tol: args.tol,
        scan_bare_json: args.scan_bare_json,
        coerce_invalid_to_missing: args.coerce_invalid_to_missing,
        instruction_template_sha256: sha256_hex(&templates.instruction),
        chunked_template_sha256: sha256_hex(&templates.chunked_instruction),
    };
    let run_id = args.run_id.clone().unwrap_or_else(|| run_config.default_run_id());
    let run_dir = args.out.join(&run_id);

    let (mut docs, unreadable_files) = load_documents(&args.corpus)?;

    let exemplar = match &args.exemplar {
        None => None,
        Some(doi) => {
            let gold_path = args
                .gold
                .as_ref()
                .ok_or_else(|| CliError::Config("one_shot mode needs --gold for the exemplar rows".into()))?;
            let gold = load_gold(&read(gold_path)?, &schema, args.coerce_invalid_to_missing)
                .map_err(config(&gold_path.display().to_string()))?;
            let position = docs
                .iter()
                .position(|d| &d.doc_id == doi)
                .ok_or_else(|| CliError::Config(format!("exemplar {doi} is not in the corpus")))?;
            let exemplar_doc = docs.remove(position);
            let provenance = Provenance {
                run_id: run_id.clone(),
                mode,
                chunk_index: None,
            };
            let rows: Vec<ExtractedRecord> = gold
                .iter()
                .filter(|g| &g.doc_id == doi)
                .map(|g| ExtractedRecord::from_gold(g, provenance.clone()))
                .collect();
            if rows.is_empty() {
                return Err(CliError::Config(format!("exemplar {doi} has no gold rows")));
            }
            Some(render_exemplar(&schema, &exemplar_doc, &rows).map_err(config("exemplar"))?)
        }
    };

    let mut bundles: Vec<PromptBundle> = Vec::new();
    for doc in &docs {
        if mode == PromptMode::Chunked {
            bundles.extend(build_chunked_prompts_with(&templates, &schema, doc, &chunk_config));
        } else {
            bundles.push(
                build_prompt_with(&templates, &schema, doc, mode, exemplar.as_ref())
                    .map_err(config(&doc.doc_id))?,
            );
        }
    }

    let cache = ResponseCache::new(args.cache_dir.clone().unwrap_or_else(|| args.out.join("cache")));
    let backend: Box<dyn CompletionBackend> = match args.backend {
        BackendKind::Replay => Box::new(ReplayBackend::new(cache)),
        BackendKind::Live => Box::new(
            LiveBackend::new(
                LiveConfig {
                    endpoint: args.endpoint.clone(),
                    api_key_env: args.api_key_env.clone(),
                    no_cache: args.no_cache,
                    ..Default::default()
                },
                Some(cache),
            )
            .map_err(config("live backend"))?,
        ),
        BackendKind::Mock => {
            let path = args
                .mock_script
                .as_ref()
                .ok_or_else(|| CliError::Config("the mock backend needs --mock-script".into()))?;
            let hashes: HashMap<usize, String> = bundles
                .iter()
                .enumerate()
                .map(|(i, b)| Ok((i, params.request(&b.prompt_text)?.request_hash)))
                .collect::<Result<_, BackendError>>()
                .map_err(config("request parameters"))?;
            Box::new(mock_backend(path, &bundles, &hashes)?)
        }
    };

    let completions = run_extraction(&bundles, backend.as_ref(), &params, args.parallelism)
        .map_err(config("backend"))?;

    let options = PostprocessOptions {
        scan_bare_json: args.scan_bare_json,
        coerce_invalid_to_missing: args.coerce_invalid_to_missing,
    };
    let mut per_doc: BTreeMap<&str, Vec<(&PromptBundle, &crate::backend::Completion)>> = BTreeMap::new();
    for (b, c) in bundles.iter().zip(&completions) {
        per_doc.entry(b.doc_id.as_str()).or_default().push((b, c));
    }

    let mut records: Vec<ExtractedRecord> = Vec::new();
    let mut warnings: Vec<Warning> = Vec::new();
    let mut failures = Vec::new();
    let mut replay_misses = BTreeSet::new();
    let mut backend_failures = 0;
    let mut succeeded = 0;
    for doc in &docs {
        let items = per_doc.remove(doc.doc_id.as_str()).unwrap_or_default();
        match postprocess_document(&doc.doc_id, &items, &schema, &run_id, mode, &options, args.tol) {
            Ok((mut r, mut w)) => {
                succeeded += 1;
                records.append(&mut r);
                warnings.append(&mut w);
            }
            Err(DocFailure::Backend(e)) => {
                if let BackendError::ReplayMiss(h) = &e {
                    replay_misses.insert(h.clone());
                }
                backend_failures += 1;
                log::error!("{}: {e}", doc.doc_id);
                failures.push(DocumentFailure {
                    doc_id: doc.doc_id.clone(),
                    error: e.to_string(),
                });
            }
            Err(DocFailure::Output(e)) => {
                log::error!("{}: {e}", doc.doc_id);
                failures.push(DocumentFailure {
                    doc_id: doc.doc_id.clone(),
                    error: e,
                });
            }
        }
    }
    if !replay_misses.is_empty() {
        log::error!(
            "{} request(s) missing from the replay cache: {}",
            replay_misses.len(),
            replay_misses.iter().cloned().collect::<Vec<_>>().join(", ")
        );
    }

    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&r.to_json(&schema).to_string());
        jsonl.push('\n');
    }
    write_atomic(&run_dir.join("records.jsonl"), jsonl.as_bytes())?;
    let mut wl = String::new();
    for w in &warnings {
        wl.push_str(&serde_json::to_string(w).expect("warning serializes"));
        wl.push('\n');
    }
    write_atomic(&run_dir.join("warnings.jsonl"), wl.as_bytes())?;

    let summary = ExtractSummary {
        run_id,
        run_dir,
        config: run_config,
        documents: docs.iter().map(|d| d.doc_id.clone()).collect(),
        succeeded,
        records: records.len(),
        warnings: warnings.len(),
        failures,
        unreadable_files,
        replay_misses: replay_misses.into_iter().collect(),
        backend_failures,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&summary.run_dir.join("run.json"), json.as_bytes())?;
    Ok(summary)
}

enum DocFailure {
    Backend(BackendError),
    Output(String),
}

/// Records of one document; any failed chunk fails the whole document.
fn postprocess_document(
    doc_id: &str,
    items: &[(&PromptBundle, &crate::backend::Completion)],
    schema: &ExtractionSchema,
    run_id: &str,
    mode: PromptMode,
    options: &PostprocessOptions,
    tol: f64,
) -> Result<(Vec<ExtractedRecord>, Vec<Warning>), DocFailure> {
    let mut per_chunk = Vec::with_capacity(items.len());
    let mut warnings = Vec::new();
    for (bundle, completion) in items {
        let response = match &completion.result {
            Ok(r) => r,
            Err(e) => {
                return Err(DocFailure::Backend(match e {
                    BackendError::ReplayMiss(h) => BackendError::ReplayMiss(h.clone()),
                    other => BackendError::Transport(other.to_string()),
                }))
            }
        };
        let provenance = Provenance {
            run_id: run_id.to_string(),
            mode,
            chunk_index: bundle.chunk_index,
        };
        let chunk_label = bundle.chunk_index.map(|c| format!(" chunk {c}")).unwrap_or_default();
        let (value, mut w) = parse_response(&response.text, doc_id, &provenance, options)
            .map_err(|e| DocFailure::Output(format!("response{chunk_label}: {e}")))?;
        warnings.append(&mut w);
        let (records, mut w) = to_records(&value, schema, doc_id, &provenance, options)
            .map_err(|e| DocFailure::Output(format!("response{chunk_label}: {e}")))?;
        warnings.append(&mut w);
        per_chunk.push(records);
    }
    if mode == PromptMode::Chunked {
        let (merged, mut w) = merge_chunk_records(&per_chunk, schema, tol);
        warnings.append(&mut w);
        Ok((merged, warnings))
    } else {
        Ok((per_chunk.into_iter().flatten().collect(), warnings))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateSummary {
    pub run_id: String,
    pub matched: usize,
    pub missed: usize,
    pub hallucinated: usize,
    pub recall: String,
    pub precision: String,
    pub out_dir: PathBuf,
}

pub fn read_records(path: &Path, schema: &ExtractionSchema) -> Result<Vec<ExtractedRecord>, CliError> {
    let text = read(path)?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let context = format!("{} line {}", path.display(), i + 1);
        let v: Value = serde_json::from_str(line).map_err(config(&context))?;
        let r = ExtractedRecord::from_json(&v, schema).map_err(config(&context))?;
        if !ids.insert(r.record_id.clone()) {
            return Err(CliError::Config(format!("{context}: duplicate record_id {}", r.record_id)));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluateSummary, CliError> {
    let schema = resolve_schema(&args.schema)?;
    let records_path = if args.records.is_dir() {
        args.records.join("records.jsonl")
    } else {
        args.records.clone()
    };
    let records_dir = records_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = args.out.clone().unwrap_or_else(|| records_dir.clone());
    let records = read_records(&records_path, &schema)?;
    let mut gold: Vec<GoldRecord> = load_gold(&read(&args.gold)?, &schema, args.coerce_invalid_to_missing)
        .map_err(config(&args.gold.display().to_string()))?;

    // Papers the run targeted, when the run summary is at hand.
    let run_json = records_dir.join("run.json");
    let run_meta: Option<Value> = if run_json.is_file() {
        Some(serde_json::from_str(&read(&run_json)?).map_err(config(&run_json.display().to_string()))?)
    } else {
        None
    };
    if let (false, Some(docs)) = (
        args.all_gold,
        run_meta.as_ref().and_then(|m| m.get("documents")).and_then(Value::as_array),
    ) {
        let scope: BTreeSet<&str> = docs.iter().filter_map(Value::as_str).collect();
        gold.retain(|g| scope.contains(g.doc_id.as_str()));
    }

    let run_id = run_meta
        .as_ref()
        .and_then(|m| m.get("run_id"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .or_else(|| records.first().map(|r| r.provenance.run_id.clone()))
        .unwrap_or_else(|| "run".into());

    let outcomes = align_corpus(&gold, &records, &schema, args.tol);
    let report = metrics_report(&run_id, &outcomes, &schema);

    let mut alignment = String::new();
    for o in &outcomes {
        alignment.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        alignment.push('\n');
    }
    write_atomic(&out_dir.join("alignment.jsonl"), alignment.as_bytes())?;
    let metrics = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out_dir.join("metrics.json"), metrics.as_bytes())?;
    let method = args.method.clone().unwrap_or_else(|| run_id.clone());
    write_atomic(&out_dir.join("summary.csv"), summary_csv(&[(&method, &report)]).as_bytes())?;
    write_atomic(&out_dir.join("properties.csv"), property_csv(&report).as_bytes())?;

    if let Some(path) = &args.annotations {
        let annotations = load_annotations(&read(path)?).map_err(config(&path.display().to_string()))?;
        let b = breakdowns(&annotations, &outcomes).map_err(config(&path.display().to_string()))?;
        let json = serde_json::to_string_pretty(&json!(b)).expect("breakdowns serialize");
        write_atomic(&out_dir.join("breakdowns.json"), json.as_bytes())?;
        write_atomic(&out_dir.join("format_breakdown.csv"), format_breakdown_csv(&b).as_bytes())?;
        write_atomic(&out_dir.join("reason_breakdown.csv"), reason_breakdown_csv(&b).as_bytes())?;
    }

    Ok(EvaluateSummary {
        run_id,
        matched: report.matched,
        missed: report.missed,
        hallucinated: report.hallucinated,
        recall: report.recall.to_string(),
        precision: report.precision.to_string(),
        out_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_spec_flags() {
        let cli = Cli::try_parse_from([
            "sciextract", "extract", "--schema", "mpea", "--corpus", "c", "--gold", "g.csv",
            "--mode", "one_shot", "--exemplar", "10.1/x", "--backend", "mock", "--chunk-size", "100",
            "--overlap", "0.05", "--tol", "0.001", "--parallelism", "8", "--out", "o", "--no-cache",
            "--scan-bare-json", "--coerce-invalid-to-missing",
        ])
        .unwrap();
        let Command::Extract(a) = cli.command else { panic!() };
        assert_eq!(a.mode, ModeArg::OneShot);
        assert_eq!(a.backend, BackendKind::Mock);
        assert_eq!((a.chunk_size, a.parallelism), (100, 8));
        assert!(a.no_cache && a.scan_bare_json && a.coerce_invalid_to_missing);
        assert!(Cli::try_parse_from(["sciextract", "extract", "--schema", "x", "--corpus", "c", "--out", "o", "--mode", "few_shot"]).is_err());
        let cli = Cli::try_parse_from(["sciextract", "evaluate", "--schema", "mpea", "--records", "r", "--gold", "g", "--annotations", "a.csv"]).unwrap();
        assert!(matches!(cli.command, Command::Evaluate(EvaluateArgs { annotations: Some(_), .. })));
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Transport("x".into()).exit_code(), EXIT_IO);
        assert!(resolve_schema("no-such-schema").is_err());
        assert_eq!(resolve_schema("diffusion").unwrap().name, "diffusion");
    }

    #[test]
    fn run_id_ignores_parallelism_and_output() {
        let base = |parallelism: usize, out: &str| ExtractArgs {
            schema: "mpea".into(),
            corpus: "c".into(),
            gold: None,
            mode: ModeArg::ZeroShot,
            exemplar: None,
            backend: BackendKind::Replay,
            cache_dir: None,
            mock_script: None,
            model: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            endpoint: DEFAULT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP_FRACTION,
            tol: DEFAULT_REL_TOL,
            parallelism,
            out: out.into(),
            run_id: None,
            no_cache: false,
            scan_bare_json: false,
            coerce_invalid_to_missing: false,
            instruction_template: None,
            chunked_template: None,
        };
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("c")).unwrap();
        let mut a = base(1, &dir.path().join("o1").display().to_string());
        a.corpus = dir.path().join("c");
        let mut b = base(8, &dir.path().join("o2").display().to_string());
        b.corpus = dir.path().join("c");
        let sa = cmd_extract(&a).unwrap();
        let sb = cmd_extract(&b).unwrap();
        assert_eq!(sa.run_id, sb.run_id);
        assert!(sa.run_id.starts_with("run-"));
        assert_eq!(sa.exit_code(), EXIT_OK);
        let mut c = base(1, &dir.path().join("o1").display().to_string());
        c.corpus = dir.path().join("c");
        c.temperature = 0.7;
        assert_ne!(cmd_extract(&c).unwrap().run_id, sa.run_id);
    }
}
