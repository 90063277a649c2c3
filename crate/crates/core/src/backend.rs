//! Completion backends: live HTTP, replay from a response cache, and a
//! scripted mock for tests.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::PromptBundle;

pub const DEFAULT_MODEL: &str = "gpt-4-1106-preview";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

const HASH_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("no cached response for request {0}")]
    ReplayMiss(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("model returned no text (finish_reason `{0}`)")]
    EmptyResponse(String),
}

impl BackendError {
    /// Network-level failures, as opposed to configuration or data problems.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_hash: String,
}

impl CompletionRequest {
    pub fn new(
        prompt_text: impl Into<String>,
        model_id: impl Into<String>,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<Self, BackendError> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(BackendError::Config(format!(
                "temperature {temperature} is outside [0, 2]"
            )));
        }
        let prompt_text = prompt_text.into();
        let model_id = model_id.into();
        let request_hash = request_hash(&prompt_text, &model_id, temperature, max_output_tokens);
        Ok(Self {
            prompt_text,
            model_id,
            temperature,
            max_output_tokens,
            request_hash,
        })
    }
}

/// SHA-256 over a JSON array of the request fields, hex encoded.
pub fn request_hash(prompt: &str, model: &str, temperature: f64, max_output_tokens: u32) -> String {
    let canonical = json!([HASH_VERSION, prompt, model, temperature, max_output_tokens]).to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub model_id: String,
    pub finish_reason: String,
    pub created_at: DateTime<Utc>,
    #[serde(skip)]
    pub from_cache: bool,
}

/// Sampling parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

impl RequestParams {
    pub fn request(&self, prompt_text: &str) -> Result<CompletionRequest, BackendError> {
        CompletionRequest::new(prompt_text, &self.model_id, self.temperature, self.max_output_tokens)
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<RawResponse, BackendError>;
}

/// One `<hash>.json` file per request holding the request and its response.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: CompletionRequest,
    response: RawResponse,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<RawResponse>, BackendError> {
        let text = match std::fs::read_to_string(self.path(hash)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::Cache(format!("{hash}: {e}"))),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| BackendError::Cache(format!("{hash}: {e}")))?;
        Ok(Some(RawResponse {
            from_cache: true,
            ..entry.response
        }))
    }

    /// Writes through a temporary file and a rename, so readers never see a
    /// partial entry.
    pub fn put(&self, request: &CompletionRequest, response: &RawResponse) -> Result<(), BackendError> {
        let err = |e: &dyn std::fmt::Display| BackendError::Cache(format!("{}: {e}", request.request_hash));
        std::fs::create_dir_all(&self.dir).map_err(|e| err(&e))?;
        let entry = CacheEntry {
            request: request.clone(),
            response: response.clone(),
        };
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| err(&e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| err(&e))?;
        tmp.write_all(&body).map_err(|e| err(&e))?;
        tmp.persist(self.path(&request.request_hash))
            .map_err(|e| err(&e.error))?;
        Ok(())
    }
}

/// Serves cached responses only.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    cache: ResponseCache,
}

impl ReplayBackend {
    pub fn new(cache: ResponseCache) -> Self {
        Self { cache }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<RawResponse, BackendError> {
        self.cache
            .get(&request.request_hash)?
            .ok_or_else(|| BackendError::ReplayMiss(request.request_hash.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text {
        text: String,
        #[serde(default = "stop")]
        finish_reason: String,
    },
    Fail {
        error: String,
    },
}

fn stop() -> String {
    "stop".into()
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply::Text {
            text: text.into(),
            finish_reason: stop(),
        }
    }

    pub fn fail(message: impl Into<String>) -> Self {
        MockReply::Fail {
            error: message.into(),
        }
    }
}

/// Scripted replies keyed by request hash, with an optional fallback.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct MockBackend {
    #[serde(default)]
    pub responses: HashMap<String, MockReply>,
    #[serde(default)]
    pub default: Option<MockReply>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, reply: MockReply) -> Self {
        self.default = Some(reply);
        self
    }

    pub fn script(mut self, request_hash: impl Into<String>, reply: MockReply) -> Self {
        self.responses.insert(request_hash.into(), reply);
        self
    }

    /// `{"responses": {"<hash>": {"text": ...} | {"error": ...}}, "default": {...}}`
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::Config(format!("mock script: {e}")))
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<RawResponse, BackendError> {
        let reply = self
            .responses
            .get(&request.request_hash)
            .or(self.default.as_ref())
            .ok_or_else(|| BackendError::Scripted(format!("nothing scripted for {}", request.request_hash)))?;
        match reply {
            MockReply::Text {
                text,
                finish_reason,
            } => Ok(RawResponse {
                text: text.clone(),
                model_id: request.model_id.clone(),
                finish_reason: finish_reason.clone(),
                created_at: DateTime::UNIX_EPOCH,
                from_cache: false,
            }),
            MockReply::Fail { error } => Err(BackendError::Scripted(error.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Wait before the second attempt; doubled for each later one.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Skip the cache lookup (responses are still written to it).
    pub no_cache: bool,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout: Duration::from_secs(600),
            retry: RetryPolicy::default(),
            no_cache: false,
        }
    }
}

/// Chat-completion client with a single user message per request.
pub struct LiveBackend {
    config: LiveConfig,
    api_key: String,
    cache: Option<ResponseCache>,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl LiveBackend {
    /// Reads the credential from `config.api_key_env`.
    pub fn new(config: LiveConfig, cache: Option<ResponseCache>) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                BackendError::Config(format!("environment variable {} is not set", config.api_key_env))
            })?;
        Ok(Self::with_api_key(config, api_key, cache))
    }

    pub fn with_api_key(config: LiveConfig, api_key: impl Into<String>, cache: Option<ResponseCache>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            config,
            api_key: api_key.into(),
            cache,
            agent,
        }
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<RawResponse, Attempt> {
        let body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(BackendError::Transport(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        parse_chat_response(&text, &request.model_id).map_err(Attempt::Fatal)
    }
}

fn parse_chat_response(body: &str, requested_model: &str) -> Result<RawResponse, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Transport(format!("response is not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Transport("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_string();
    if text.is_empty() && finish_reason == "stop" {
        return Err(BackendError::EmptyResponse(finish_reason));
    }
    Ok(RawResponse {
        text,
        model_id: v
            .get("model")
            .and_then(Value::as_str)
            .unwrap_or(requested_model)
            .to_string(),
        finish_reason,
        created_at: Utc::now(),
        from_cache: false,
    })
}

impl CompletionBackend for LiveBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<RawResponse, BackendError> {
        if let (Some(cache), false) = (&self.cache, self.config.no_cache) {
            if let Some(hit) = cache.get(&request.request_hash)? {
                return Ok(hit);
            }
        }
        let attempts = self.config.retry.attempts.max(1);
        let mut backoff = self.config.retry.initial_backoff;
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                log::warn!("request {} failed ({last}); retrying in {backoff:?}", &request.request_hash[..12]);
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(request) {
                Ok(response) => {
                    if let Some(cache) = &self.cache {
                        cache.put(request, &response)?;
                    }
                    return Ok(response);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(BackendError::Transport(format!("{last} after {attempts} attempts")))
    }
}

/// One completed bundle: the request that was sent and its outcome.
#[derive(Debug)]
pub struct Completion {
    pub request: CompletionRequest,
    pub result: Result<RawResponse, BackendError>,
}

/// Completes every bundle on a pool of `parallelism` workers. Results come
/// back in input order and failures stay inline.
pub fn run_extraction(
    bundles: &[PromptBundle],
    backend: &dyn CompletionBackend,
    params: &RequestParams,
    parallelism: usize,
) -> Result<Vec<Completion>, BackendError> {
    if parallelism == 0 {
        return Err(BackendError::Config("parallelism must be at least 1".into()));
    }
    let requests = bundles
        .iter()
        .map(|b| params.request(&b.prompt_text))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| BackendError::Config(e.to_string()))?;
    Ok(pool.install(|| {
        requests
            .into_par_iter()
            .map(|request| {
                let result = backend.complete(&request);
                Completion { request, result }
            })
            .collect()
    }))
}
