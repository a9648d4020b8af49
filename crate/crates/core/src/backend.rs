//! Completion backends: an HTTP client for OpenAI-style completion
//! endpoints and a scripted replay client for deterministic, offline runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable carrying the API credential.
pub const API_KEY_ENV: &str = "TOOLFORGE_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: usize, last_error: String },
    #[error("replay miss: {0}")]
    ReplayMiss(String),
    #[error("invalid replay file: {0}")]
    InvalidReplayFile(String),
}

/// One completion request. Generation is greedy: temperature is fixed at
/// zero and only the top completion is used.
#[derive(Debug, Clone, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f32,
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn new(
        model: impl Into<String>,
        prompt: impl Into<String>,
        max_tokens: usize,
        stop: Vec<String>,
    ) -> Self {
        CompletionRequest {
            model: model.into(),
            prompt: prompt.into(),
            max_tokens,
            temperature: 0.0,
            stop,
        }
    }
}

/// A completion endpoint. Implementations must be shareable across threads
/// so test cases can be evaluated concurrently.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

/// HTTP client for `POST <endpoint>` with a JSON body of
/// `{model, prompt, max_tokens, temperature, stop}` and a JSON response of
/// `{choices: [{text}]}`. Transient failures are retried with bounded
/// exponential backoff.
pub struct HttpCompletionClient {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    max_attempts: usize,
    backoff: Duration,
}

impl HttpCompletionClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpCompletionClient {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            client: reqwest::blocking::Client::new(),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_max_attempts(mut self, attempts: usize) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut last_error = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1)) as u32);
            }
            let mut call = self.client.post(&self.endpoint).json(request);
            if let Some(key) = &self.api_key {
                call = call.bearer_auth(key);
            }
            match call.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        match response.json::<CompletionResponse>() {
                            Ok(body) => {
                                return body.choices.into_iter().next().map(|c| c.text).ok_or(
                                    BackendError::Unavailable {
                                        attempts: attempt + 1,
                                        last_error: "response carried no choices".into(),
                                    },
                                );
                            }
                            Err(err) => {
                                last_error = format!("bad response body: {err}");
                                continue;
                            }
                        }
                    }
                    last_error = format!("HTTP {status}");
                    if status.is_client_error() {
                        // 4xx will not improve on retry.
                        return Err(BackendError::Unavailable {
                            attempts: attempt + 1,
                            last_error,
                        });
                    }
                }
                Err(err) => {
                    last_error = format!("transport error: {err}");
                }
            }
        }
        Err(BackendError::Unavailable {
            attempts: self.max_attempts,
            last_error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Ordinal,
}

/// One line of a replay file: either an exact match on the prompt's SHA-256
/// or an ordinal entry served by call sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(rename = "match")]
    pub match_kind: MatchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub completion: String,
}

impl ReplayEntry {
    /// Exact-match entry keyed by the given prompt's hash.
    pub fn for_prompt(prompt: &str, completion: impl Into<String>) -> Self {
        ReplayEntry {
            match_kind: MatchKind::Exact,
            prompt_sha256: Some(sha256_hex(prompt)),
            index: None,
            completion: completion.into(),
        }
    }

    pub fn ordinal(index: usize, completion: impl Into<String>) -> Self {
        ReplayEntry {
            match_kind: MatchKind::Ordinal,
            prompt_sha256: None,
            index: Some(index),
            completion: completion.into(),
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Replay backend: completions come from a table instead of a model. Exact
/// entries are matched on the prompt hash first; otherwise ordinal entries
/// are served in call order.
#[derive(Debug)]
pub struct ScriptedClient {
    exact: BTreeMap<String, String>,
    ordinal: BTreeMap<usize, String>,
    // Counts ordinal lookups only; exact hits do not consume positions.
    cursor: AtomicUsize,
}

impl ScriptedClient {
    pub fn from_entries(entries: Vec<ReplayEntry>) -> Result<Self, BackendError> {
        let mut exact = BTreeMap::new();
        let mut ordinal = BTreeMap::new();
        for (n, entry) in entries.into_iter().enumerate() {
            match entry.match_kind {
                MatchKind::Exact => {
                    let key = entry.prompt_sha256.ok_or_else(|| {
                        BackendError::InvalidReplayFile(format!(
                            "entry {n}: exact match requires prompt_sha256"
                        ))
                    })?;
                    exact.insert(key, entry.completion);
                }
                MatchKind::Ordinal => {
                    let index = entry.index.ok_or_else(|| {
                        BackendError::InvalidReplayFile(format!(
                            "entry {n}: ordinal match requires index"
                        ))
                    })?;
                    ordinal.insert(index, entry.completion);
                }
            }
        }
        Ok(ScriptedClient {
            exact,
            ordinal,
            cursor: AtomicUsize::new(0),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| BackendError::InvalidReplayFile(format!("{}: {err}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(line).map_err(|err| {
                BackendError::InvalidReplayFile(format!("line {}: {err}", lineno + 1))
            })?;
            entries.push(entry);
        }
        ScriptedClient::from_entries(entries)
    }
}

impl CompletionClient for ScriptedClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let hash = sha256_hex(&request.prompt);
        if let Some(completion) = self.exact.get(&hash) {
            return Ok(completion.clone());
        }
        let position = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.ordinal.get(&position).cloned().ok_or_else(|| {
            BackendError::ReplayMiss(format!(
                "no entry for prompt {} (ordinal position {position})",
                &hash[..12]
            ))
        })
    }
}
