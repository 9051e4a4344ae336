//! Plan-generation backends and the chat-completions wire shape they share.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

/// Body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// The mission query: content of the first user message.
    pub fn query(&self) -> Option<&str> {
        self.messages.iter().find(|m| m.role == "user").map(|m| m.content.as_str())
    }

    /// Number of assistant turns already in the conversation.
    pub fn round(&self) -> usize {
        self.messages.iter().filter(|m| m.role == "assistant").count()
    }

    /// Stable key for record/replay: SHA-256 of the JSON body.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(body))
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("UNPARSEABLE_QUERY: {0}")]
    UnparseableQuery(String),
    #[error("query cannot be satisfied on this farm: {0}")]
    Unsatisfiable(String),
    #[error("no recorded exchange {0}")]
    ReplayMiss(String),
    #[error("fixture I/O: {0}")]
    Io(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that turns a chat request into a reply text.
pub trait PlanBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Seconds.
    pub timeout: f64,
    pub api_key_env: String,
    /// Delay before the single retry, in milliseconds.
    pub retry_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o-2024-05-13".into(),
            temperature: 0.2,
            max_tokens: 4096,
            timeout: 120.0,
            api_key_env: "OPENAI_API_KEY".into(),
            retry_backoff_ms: 500,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

impl BackendConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens < 1 {
            return Err(ConfigError::Invalid("max_tokens must be at least 1".into()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(ConfigError::Invalid("timeout must be positive".into()));
        }
        if self.api_key_env.is_empty() || self.model_name.is_empty() || self.endpoint_url.is_empty() {
            return Err(ConfigError::Invalid("endpoint_url, model_name and api_key_env must be set".into()));
        }
        Ok(())
    }
}

/// HTTP client for a chat-completions endpoint.
pub struct LiveBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn attempt(&self, request: &ChatRequest, key: &str) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(&self.config.endpoint_url)
            .bearer_auth(key)
            .json(request)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http { status: status.as_u16(), body });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("no choices[0].message.content".into()))
    }
}

impl PlanBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| BackendError::MissingApiKey(self.config.api_key_env.clone()))?;
        let mut request = request.clone();
        request.model = self.config.model_name.clone();
        request.temperature = self.config.temperature;
        request.max_tokens = self.config.max_tokens;
        match self.attempt(&request, &key) {
            Err(e) if e.retryable() => {
                std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms));
                self.attempt(&request, &key)
            }
            other => other,
        }
    }
}

/// Replies with a fixed script, one entry per conversation round; the last
/// entry repeats.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    responses: Vec<String>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "script needs at least one response");
        Self { responses }
    }
}

impl PlanBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        Ok(self.responses[request.round().min(self.responses.len() - 1)].clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Exchange {
    request: ChatRequest,
    response: String,
}

/// Serves recorded exchanges from a directory, one `<fingerprint>.json` per
/// request. With an inner backend it records misses instead of failing.
pub struct ReplayBackend {
    dir: PathBuf,
    recorder: Option<Box<dyn PlanBackend>>,
}

impl ReplayBackend {
    pub fn replay(dir: impl AsRef<Path>) -> Self {
        Self { dir: dir.as_ref().to_path_buf(), recorder: None }
    }

    pub fn record(dir: impl AsRef<Path>, inner: Box<dyn PlanBackend>) -> Self {
        Self { dir: dir.as_ref().to_path_buf(), recorder: Some(inner) }
    }

    pub fn fixture_path(&self, request: &ChatRequest) -> PathBuf {
        self.dir.join(format!("{}.json", request.fingerprint()))
    }
}

impl PlanBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let path = self.fixture_path(request);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let ex: Exchange = serde_json::from_str(&text)
                    .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
                Ok(ex.response)
            }
            Err(_) => {
                let Some(inner) = &self.recorder else {
                    return Err(BackendError::ReplayMiss(request.fingerprint()));
                };
                let response = inner.complete(request)?;
                let ex = Exchange { request: request.clone(), response: response.clone() };
                std::fs::create_dir_all(&self.dir).map_err(|e| BackendError::Io(e.to_string()))?;
                let body = serde_json::to_string_pretty(&ex).expect("exchange serializes");
                std::fs::write(&path, body).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
                Ok(response)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(extra: &[ChatMessage]) -> ChatRequest {
        let mut messages = vec![ChatMessage::system("sys"), ChatMessage::user("q")];
        messages.extend_from_slice(extra);
        ChatRequest { model: "m".into(), messages, temperature: 0.2, max_tokens: 10 }
    }

    #[test]
    fn scripted_follows_rounds() {
        let b = ScriptedBackend::new(["a", "b"]);
        assert_eq!(b.complete(&request(&[])).unwrap(), "a");
        let one = [ChatMessage::assistant("a"), ChatMessage::user("fix")];
        assert_eq!(b.complete(&request(&one)).unwrap(), "b");
        let two = [one[0].clone(), one[1].clone(), ChatMessage::assistant("b"), ChatMessage::user("fix")];
        assert_eq!(b.complete(&request(&two)).unwrap(), "b");
    }

    #[test]
    fn config_defaults_and_bounds() {
        let cfg = BackendConfig::from_toml("").unwrap();
        assert_eq!(cfg.temperature, 0.2);
        assert_eq!(cfg.max_tokens, 4096);
        assert!(BackendConfig::from_toml("temperature = 2.5").is_err());
        assert!(BackendConfig::from_toml("max_tokens = 0").is_err());
        assert!(BackendConfig::from_toml("api_key = \"sk\"").is_err());
    }

    #[test]
    fn record_then_replay() {
        let dir = std::env::temp_dir().join(format!("agmp-replay-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let rec = ReplayBackend::record(&dir, Box::new(ScriptedBackend::new(["hello"])));
        let req = request(&[]);
        assert_eq!(rec.complete(&req).unwrap(), "hello");
        let rep = ReplayBackend::replay(&dir);
        assert_eq!(rep.complete(&req).unwrap(), "hello");
        let mut other = req.clone();
        other.temperature = 0.3;
        assert!(matches!(rep.complete(&other), Err(BackendError::ReplayMiss(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_key_is_reported() {
        let cfg = BackendConfig { api_key_env: "AGMP_TEST_KEY_THAT_IS_NOT_SET".into(), ..Default::default() };
        let b = LiveBackend::new(cfg).unwrap();
        assert!(matches!(b.complete(&request(&[])), Err(BackendError::MissingApiKey(_))));
    }
}
