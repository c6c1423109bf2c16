//! Chat-completion backends: HTTP, transcript replay and recording.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "CRASHSCEN_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "CRASHSCEN_LLM_API_KEY";
pub const ENV_MODEL: &str = "CRASHSCEN_LLM_MODEL";

pub const TRANSCRIPT_FORMAT: &str = "crashscen-transcript";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("backend returned an unusable response: {0}")]
    Format(String),
    #[error("no recorded response for {turn:?} turn of subject {digest}")]
    NoRecording { turn: TurnKind, digest: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Participants,
    Positions,
    Events,
    ClassifyPosition,
    ContentFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// One request in a dialogue: the whole conversation so far plus the keys a
/// replaying backend needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub kind: TurnKind,
    pub subject_digest: String,
    pub messages: Vec<ChatMessage>,
}

impl DialogueTurn {
    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub trait ExtractionBackend: Send + Sync {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError>;
}

impl<T: ExtractionBackend + ?Sized> ExtractionBackend for &T {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        (**self).complete(turn)
    }
}

impl<T: ExtractionBackend + ?Sized> ExtractionBackend for Box<T> {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        (**self).complete(turn)
    }
}

/// Hex SHA-256 of the trimmed subject text.
pub fn subject_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.trim().as_bytes()))
}

/// Strips a surrounding Markdown code fence, which chat models often add.
pub fn strip_fence(s: &str) -> &str {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
        return rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    t
}

/// OpenAI-style chat-completions client.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads endpoint, key and model from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| BackendError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        Ok(HttpBackend::new(endpoint, std::env::var(ENV_API_KEY).ok(), model))
    }
}

impl ExtractionBackend for HttpBackend {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": turn.messages,
        });
        let mut req = ureq::post(&self.endpoint)
            .timeout(self.timeout)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Status(code, r) => {
                BackendError::Transport(format!("HTTP {code}: {}", r.into_string().unwrap_or_default()))
            }
            ureq::Error::Transport(t) => BackendError::Transport(t.to_string()),
        })?;
        let value: serde_json::Value = resp
            .into_json()
            .map_err(|e| BackendError::Format(format!("response is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| strip_fence(s).to_string())
            .ok_or_else(|| BackendError::Format("missing choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn: TurnKind,
    pub subject_digest: String,
    /// Final user message of the turn; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub format: String,
    pub version: u32,
    pub entries: Vec<TranscriptEntry>,
}

impl Default for Transcript {
    fn default() -> Self {
        Transcript {
            format: TRANSCRIPT_FORMAT.into(),
            version: 1,
            entries: Vec::new(),
        }
    }
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Transcript, BackendError> {
        let t: Transcript =
            serde_json::from_str(text).map_err(|e| BackendError::Config(format!("bad transcript: {e}")))?;
        if t.format != TRANSCRIPT_FORMAT {
            return Err(BackendError::Config(format!("unexpected transcript format '{}'", t.format)));
        }
        Ok(t)
    }
}

/// Replays recorded responses keyed by (turn kind, subject digest).
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    responses: HashMap<(TurnKind, String), String>,
}

impl FixtureBackend {
    pub fn from_transcripts(transcripts: impl IntoIterator<Item = Transcript>) -> Self {
        let mut responses = HashMap::new();
        for t in transcripts {
            for e in t.entries {
                responses.entry((e.turn, e.subject_digest)).or_insert(e.response);
            }
        }
        FixtureBackend { responses }
    }

    /// Loads one transcript file, or every `*.json` file of a directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let io = |e: std::io::Error| BackendError::Config(format!("{}: {e}", path.display()));
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in std::fs::read_dir(path).map_err(io)? {
                let p = entry.map_err(io)?.path();
                if p.extension().is_some_and(|e| e == "json") {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut transcripts = Vec::new();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(io)?;
            transcripts.push(Transcript::parse(&text)?);
        }
        Ok(Self::from_transcripts(transcripts))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ExtractionBackend for FixtureBackend {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        self.responses
            .get(&(turn.kind, turn.subject_digest.clone()))
            .cloned()
            .ok_or_else(|| BackendError::NoRecording {
                turn: turn.kind,
                digest: turn.subject_digest.clone(),
            })
    }
}

/// Tries `primary`, falling back to `fallback` when it has no recording.
pub struct FallbackBackend<A, B> {
    pub primary: A,
    pub fallback: B,
}

impl<A: ExtractionBackend, B: ExtractionBackend> ExtractionBackend for FallbackBackend<A, B> {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        match self.primary.complete(turn) {
            Err(BackendError::NoRecording { .. }) => self.fallback.complete(turn),
            other => other,
        }
    }
}

/// Wraps a backend and records every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<B: ExtractionBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            entries: self.entries.lock().expect("recorder lock").clone(),
            ..Transcript::default()
        }
    }
}

impl<B: ExtractionBackend> ExtractionBackend for RecordingBackend<B> {
    fn complete(&self, turn: &DialogueTurn) -> Result<String, BackendError> {
        let response = self.inner.complete(turn)?;
        let mut entries = self.entries.lock().expect("recorder lock");
        let key_seen = entries
            .iter()
            .any(|e| e.turn == turn.kind && e.subject_digest == turn.subject_digest);
        if !key_seen {
            entries.push(TranscriptEntry {
                turn: turn.kind,
                subject_digest: turn.subject_digest.clone(),
                request: Some(turn.last_user_message().to_string()),
                response: response.clone(),
            });
        }
        Ok(response)
    }
}
