//! Provider-agnostic completion gateway.
//!
//! A [`Gateway`] wraps one [`Backend`] and adds a concurrency limit, an
//! optional content-addressed cache and a recorder. Requests are keyed by the
//! SHA-256 of their canonical JSON form (sorted keys), so a recorded
//! [`ReplayArchive`] can answer the same experiment offline, and in replay
//! mode a request that was never recorded is a hard [`GatewayError::ReplayMiss`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_URL_ENV: &str = "TRACEBENCH_API_URL";
pub const API_KEY_ENV: &str = "TRACEBENCH_API_KEY";
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("provider error {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("no recorded response for request digest {0}")]
    ReplayMiss(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("archive {path}: {message}")]
    Archive { path: String, message: String },
}

impl GatewayError {
    fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Timeout)
    }
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Re-ask counter. Zero (omitted from the canonical form) for first asks,
    /// so a re-ask of an identical prompt gets its own digest and record.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub attempt: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, settings: &ModelSettings) -> Self {
        Self {
            prompt: prompt.into(),
            model_id: settings.model_id.clone(),
            temperature: settings.temperature,
            max_output_tokens: settings.max_output_tokens,
            attempt: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// JSON with lexicographically sorted keys.
    pub fn canonical_json(&self) -> String {
        // serde_json::Value objects are BTreeMap-backed, so keys come out sorted
        serde_json::to_value(self)
            .expect("request serializes")
            .to_string()
    }

    /// Hex SHA-256 of [`CompletionRequest::canonical_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Model parameters applied to every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    #[serde(default = "ModelSettings::default_model")]
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "ModelSettings::default_max_tokens")]
    pub max_output_tokens: u32,
}

impl ModelSettings {
    fn default_model() -> String {
        "claude-instant-v1".into()
    }

    fn default_max_tokens() -> u32 {
        1024
    }
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            model_id: Self::default_model(),
            temperature: 0.0,
            max_output_tokens: Self::default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub digest: String,
    pub request: CompletionRequest,
    pub response_text: String,
    pub provider: String,
    pub elapsed_ms: u64,
}

/// Something that turns a prompt into text.
pub trait Backend: Send + Sync {
    fn provider(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

/// Backend driven by a closure; used for synthetic responders and tests.
pub struct FnBackend<F> {
    provider: String,
    respond: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(provider: impl Into<String>, respond: F) -> Self {
        Self {
            provider: provider.into(),
            respond,
        }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn provider(&self) -> &str {
        &self.provider
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (self.respond)(request)
    }
}

/// HTTPS chat-completion backend speaking the widely implemented
/// `POST {base}/chat/completions` JSON shape.
pub struct LiveBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            agent,
        }
    }

    pub fn from_env(timeout: Duration) -> Result<Self, GatewayError> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| GatewayError::Config(format!("{name} is not set")))
        };
        Ok(Self::new(var(API_URL_ENV)?, var(API_KEY_ENV)?, timeout))
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let payload = serde_json::json!({
            "model": request.model_id,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut response = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&payload)
            .map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(map_ureq_error)?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Provider {
                status,
                message: text,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| GatewayError::Provider {
                status,
                message: format!("response is not JSON: {e}"),
            })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Provider {
                status,
                message: "response has no choices[0].message.content".into(),
            })
    }
}

fn map_ureq_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        other => GatewayError::Transport(other.to_string()),
    }
}

impl Backend for LiveBackend {
    fn provider(&self) -> &str {
        "openai-compatible"
    }

    /// One retry with the identical request on transport failure.
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        match self.attempt(request) {
            Err(e) if e.is_transport() => self.attempt(request),
            other => other,
        }
    }
}

/// Recorded completions keyed by request digest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayArchive {
    records: BTreeMap<String, CompletionRecord>,
}

impl ReplayArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&CompletionRecord> {
        self.records.get(digest)
    }

    pub fn records(&self) -> impl Iterator<Item = &CompletionRecord> {
        self.records.values()
    }

    /// Keeps the first record seen for a digest.
    pub fn insert(&mut self, record: CompletionRecord) {
        self.records.entry(record.digest.clone()).or_insert(record);
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = CompletionRecord>) {
        for r in records {
            self.insert(r);
        }
    }

    /// Newline-delimited JSON records; blank lines are ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Self, GatewayError> {
        let mut archive = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| GatewayError::Archive {
                path: origin.to_string(),
                message: format!("line {}: {message}", lineno + 1),
            };
            let record: CompletionRecord =
                serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let expected = record.request.digest();
            if record.digest != expected {
                return Err(bad(format!(
                    "digest {} does not match request (expected {expected})",
                    record.digest
                )));
            }
            archive.insert(record);
        }
        Ok(archive)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Archive {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// One record per line, ordered by digest.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&record_line(r));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        fs::write(path, self.to_ndjson()).map_err(|e| GatewayError::Archive {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn record_line(record: &CompletionRecord) -> String {
    serde_json::to_string(record).expect("record serializes")
}

/// Backend answering only from a [`ReplayArchive`].
pub struct ReplayBackend {
    archive: ReplayArchive,
}

impl ReplayBackend {
    pub fn new(archive: ReplayArchive) -> Self {
        Self { archive }
    }

    pub fn archive(&self) -> &ReplayArchive {
        &self.archive
    }
}

impl Backend for ReplayBackend {
    fn provider(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let digest = request.digest();
        self.archive
            .get(&digest)
            .map(|r| r.response_text.clone())
            .ok_or(GatewayError::ReplayMiss(digest))
    }
}

/// Sends each distinct request once through `backend` and returns the archive.
pub fn record_session(
    backend: &dyn Backend,
    requests: &[CompletionRequest],
) -> Result<ReplayArchive, GatewayError> {
    let gateway = Gateway::borrowed(backend);
    for request in requests {
        gateway.complete(request)?;
    }
    Ok(gateway.recorded())
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Completion text plus the digest of the request that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub digest: String,
}

struct Cache {
    entries: HashMap<String, CompletionRecord>,
    file: Option<PathBuf>,
}

enum BackendRef<'a> {
    Owned(Box<dyn Backend + 'a>),
    Borrowed(&'a dyn Backend),
}

impl BackendRef<'_> {
    fn get(&self) -> &dyn Backend {
        match self {
            BackendRef::Owned(b) => b.as_ref(),
            BackendRef::Borrowed(b) => *b,
        }
    }
}

/// Shareable completion front-end. Every served completion is recorded.
pub struct Gateway<'a> {
    backend: BackendRef<'a>,
    limit: Semaphore,
    concurrency: usize,
    cache: Option<Mutex<Cache>>,
    recorded: Mutex<BTreeMap<String, CompletionRecord>>,
}

impl<'a> Gateway<'a> {
    pub fn new(backend: Box<dyn Backend + 'a>) -> Self {
        Self::build(BackendRef::Owned(backend))
    }

    pub fn borrowed(backend: &'a dyn Backend) -> Self {
        Self::build(BackendRef::Borrowed(backend))
    }

    fn build(backend: BackendRef<'a>) -> Self {
        Self {
            backend,
            limit: Semaphore::new(DEFAULT_CONCURRENCY),
            concurrency: DEFAULT_CONCURRENCY,
            cache: None,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn replay(archive: ReplayArchive) -> Gateway<'static> {
        Gateway::new(Box::new(ReplayBackend::new(archive)))
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        let n = n.max(1);
        self.limit = Semaphore::new(n);
        self.concurrency = n;
        self
    }

    /// Serves digest hits from `archive` without touching the backend. New
    /// completions are appended to `file` when given.
    pub fn with_cache(mut self, archive: ReplayArchive, file: Option<PathBuf>) -> Self {
        self.cache = Some(Mutex::new(Cache {
            entries: archive.records.into_iter().collect(),
            file,
        }));
        self
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn provider(&self) -> &str {
        self.backend.get().provider()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let digest = request.digest();

        if let Some(cache) = &self.cache {
            let hit = cache
                .lock()
                .expect("cache poisoned")
                .entries
                .get(&digest)
                .cloned();
            if let Some(record) = hit {
                let text = record.response_text.clone();
                self.remember(record);
                return Ok(Completion { text, digest });
            }
        }

        let started = Instant::now();
        let text = {
            let _permit = self.limit.acquire();
            self.backend.get().complete(request)?
        };
        let record = CompletionRecord {
            digest: digest.clone(),
            request: request.clone(),
            response_text: text.clone(),
            provider: self.provider().to_string(),
            elapsed_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(cache) = &self.cache {
            let mut cache = cache.lock().expect("cache poisoned");
            if let Some(path) = &cache.file {
                append_record(path, &record)?;
            }
            cache.entries.insert(digest.clone(), record.clone());
        }
        self.remember(record);
        Ok(Completion { text, digest })
    }

    fn remember(&self, record: CompletionRecord) {
        self.recorded
            .lock()
            .expect("recorder poisoned")
            .entry(record.digest.clone())
            .or_insert(record);
    }

    /// Everything served so far, one record per digest.
    pub fn recorded(&self) -> ReplayArchive {
        ReplayArchive {
            records: self.recorded.lock().expect("recorder poisoned").clone(),
        }
    }
}

fn append_record(path: &Path, record: &CompletionRecord) -> Result<(), GatewayError> {
    let err = |e: std::io::Error| GatewayError::Archive {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(err)?;
    writeln!(file, "{}", record_line(record)).map_err(err)
}
