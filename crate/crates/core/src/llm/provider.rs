use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;

use super::{
    append_transcript, estimate_tokens, read_transcript, ChatExchange, ChatRequest, LlmError, ProviderConfig,
    ProviderKind, Usage,
};

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, LlmError>;
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct LiveProvider {
    client: reqwest::blocking::Client,
    url: String,
    key: String,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl LiveProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingKey(config.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Network(e.to_string()))?;
        let url = format!("{}/chat/completions", config.endpoint.trim_end_matches('/'));
        Ok(LiveProvider { client, url, key })
    }
}

impl Provider for LiveProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, LlmError> {
        request.check()?;
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(m) = request.max_tokens {
            body["max_tokens"] = m.into();
        }
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Network(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LlmError::Http { status: status.as_u16(), body });
        }
        let parsed: Completion = resp.json().map_err(|e| LlmError::Network(format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Network("response has no message content".into()))?;
        let usage = match parsed.usage {
            Some(u) => Usage { input_tokens: u.prompt_tokens, output_tokens: u.completion_tokens },
            None => Usage {
                input_tokens: request.messages.iter().map(|m| estimate_tokens(&m.content)).sum(),
                output_tokens: estimate_tokens(&text),
            },
        };
        Ok(ChatExchange { digest: request.digest(), request: request.clone(), response: text, usage, timestamp: now() })
    }
}

/// Serves stored exchanges by request digest. Identical requests recorded
/// several times are served in recorded order; the last one repeats.
pub struct ReplayProvider {
    by_digest: HashMap<String, Vec<ChatExchange>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl ReplayProvider {
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| LlmError::Transcript { path: dir.display().to_string(), message: e.to_string() })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut all = Vec::new();
        for f in files {
            all.extend(read_transcript(&f)?);
        }
        Ok(Self::from_exchanges(all))
    }

    pub fn from_exchanges(exchanges: Vec<ChatExchange>) -> Self {
        let mut by_digest: HashMap<String, Vec<ChatExchange>> = HashMap::new();
        for e in exchanges {
            by_digest.entry(e.request.digest()).or_default().push(e);
        }
        ReplayProvider { by_digest, cursor: Mutex::new(HashMap::new()) }
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, LlmError> {
        request.check()?;
        let digest = request.digest();
        let Some(list) = self.by_digest.get(&digest) else {
            return Err(LlmError::ReplayMiss { digest, template_id: request.template_id.clone() });
        };
        let mut cursor = self.cursor.lock().unwrap();
        let i = cursor.entry(digest).or_insert(0);
        let e = list[(*i).min(list.len() - 1)].clone();
        *i += 1;
        Ok(e)
    }
}

/// Forwards to another provider and appends every exchange to a
/// transcript file.
pub struct RecordingProvider<P> {
    inner: P,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P, path: PathBuf) -> Self {
        RecordingProvider { inner, path, lock: Mutex::new(()) }
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, LlmError> {
        let e = self.inner.complete(request)?;
        let _guard = self.lock.lock().unwrap();
        append_transcript(&self.path, &e)?;
        Ok(e)
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, String> + Send + Sync;

/// Answers from a function; token counts are estimated. Used to author
/// transcripts and in tests.
pub struct ScriptedProvider {
    responder: Box<Responder>,
    timestamp: Option<String>,
}

impl ScriptedProvider {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, String> + Send + Sync + 'static) -> Self {
        ScriptedProvider { responder: Box::new(f), timestamp: None }
    }

    /// Stamps every exchange with a fixed time, for reproducible files.
    pub fn with_timestamp(mut self, t: impl Into<String>) -> Self {
        self.timestamp = Some(t.into());
        self
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, LlmError> {
        request.check()?;
        let text = (self.responder)(request).map_err(LlmError::Script)?;
        let usage = Usage {
            input_tokens: request.messages.iter().map(|m| estimate_tokens(&m.content)).sum(),
            output_tokens: estimate_tokens(&text),
        };
        Ok(ChatExchange {
            digest: request.digest(),
            request: request.clone(),
            response: text,
            usage,
            timestamp: self.timestamp.clone().unwrap_or_else(now),
        })
    }
}

/// Builds the provider selected by the configuration. Record mode appends
/// to `<transcript_dir>/transcript.jsonl`.
pub fn open_provider(config: &ProviderConfig) -> Result<Box<dyn Provider>, LlmError> {
    config.check()?;
    Ok(match config.kind {
        ProviderKind::Live => Box::new(LiveProvider::new(config)?),
        ProviderKind::Replay => Box::new(ReplayProvider::from_dir(config.transcript_dir.as_deref().unwrap())?),
        ProviderKind::Record => {
            let dir = config.transcript_dir.clone().unwrap();
            Box::new(RecordingProvider::new(LiveProvider::new(config)?, dir.join("transcript.jsonl")))
        }
    })
}
