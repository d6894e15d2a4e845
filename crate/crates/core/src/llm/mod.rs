//! Provider-independent chat completion with record/replay and prompt
//! templates.

mod provider;
mod template;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use provider::{open_provider, LiveProvider, Provider, RecordingProvider, ReplayProvider, ScriptedProvider};
pub use template::{render_template, NO_FEEDBACK, PromptTemplate, TemplateError, TemplateKind, TemplateSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Template the prompt was rendered from; part of the replay key.
    pub template_id: String,
    pub messages: Vec<Message>,
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Replay key: template id, rendered messages and temperature. The model
    /// name is left out so transcripts survive a model rename.
    pub fn digest(&self) -> String {
        let key = serde_json::json!([self.template_id, self.messages, self.temperature]);
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    pub fn check(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        self.input_tokens += o.input_tokens;
        self.output_tokens += o.output_tokens;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub digest: String,
    pub request: ChatRequest,
    pub response: String,
    pub usage: Usage,
    pub timestamp: String,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded exchange for digest {digest} (template {template_id}); the transcript is stale")]
    ReplayMiss { digest: String, template_id: String },
    #[error("API key variable {0} is not set")]
    MissingKey(String),
    #[error("provider request failed: {0}")]
    Network(String),
    #[error("provider rejected the request ({status}): {body}")]
    Http { status: u16, body: String },
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: String, message: String },
    #[error("scripted provider: {0}")]
    Script(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    #[default]
    Replay,
    Record,
}

/// Where completions come from. The API key itself is only ever read from
/// the environment variable named here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub transcript_dir: Option<std::path::PathBuf>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Replay,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            transcript_dir: None,
            max_tokens: None,
            timeout_secs: 300,
        }
    }
}

impl ProviderConfig {
    pub fn check(&self) -> Result<(), LlmError> {
        if matches!(self.kind, ProviderKind::Replay | ProviderKind::Record) && self.transcript_dir.is_none() {
            return Err(LlmError::Config(format!("{:?} mode needs a transcript directory", self.kind).to_lowercase()));
        }
        Ok(())
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<ChatExchange>, LlmError> {
    let bad = |message: String| LlmError::Transcript { path: path.display().to_string(), message };
    let file = std::fs::File::open(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn append_transcript(path: &Path, exchange: &ChatExchange) -> Result<(), LlmError> {
    let bad = |e: std::io::Error| LlmError::Transcript { path: path.display().to_string(), message: e.to_string() };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(bad)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(bad)?;
    let line = serde_json::to_string(exchange).expect("exchange serializes");
    writeln!(f, "{line}").map_err(bad)
}

/// Crude deterministic token estimate for providers that report none.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(t: f64) -> ChatRequest {
        ChatRequest {
            template_id: "type_extraction".into(),
            messages: vec![Message::user("hello")],
            model: "m".into(),
            temperature: t,
            max_tokens: None,
        }
    }

    #[test]
    fn digest_ignores_model() {
        let a = req(0.0);
        let mut b = a.clone();
        b.model = "other".into();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), req(0.5).digest());
        let mut c = a.clone();
        c.template_id = "hierarchy".into();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn temperature_bounds() {
        assert!(req(0.0).check().is_ok());
        assert!(req(2.0).check().is_ok());
        assert!(req(2.1).check().is_err());
        assert!(req(-0.1).check().is_err());
    }

    #[test]
    fn replay_needs_directory() {
        assert!(ProviderConfig::default().check().is_err());
        let live = ProviderConfig { kind: ProviderKind::Live, ..ProviderConfig::default() };
        assert!(live.check().is_ok());
    }
}
