use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ProposalBackend, PromptRequest};

/// Environment variable holding the remote backend's bearer token.
pub const API_KEY_ENV: &str = "MORPHOSKILL_API_KEY";

/// Replays `{op_kind}_{generation}_{ordinal}.txt` files from a directory.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pub dir: PathBuf,
}

impl ScriptedBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ScriptedBackend { dir: dir.into() }
    }

    pub fn fixture_path(&self, request: &PromptRequest) -> PathBuf {
        self.dir.join(format!("{}_{}_{}.txt", request.op_kind.name(), request.generation, request.ordinal))
    }
}

impl ProposalBackend for ScriptedBackend {
    fn name(&self) -> String {
        format!("scripted:{}", self.dir.display())
    }

    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let path = self.fixture_path(request);
        std::fs::read_to_string(&path).map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))
    }

    fn max_retries(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: usize,
    /// Opaque extra fields merged into the request body (token limits etc.).
    pub extra: serde_json::Map<String, Value>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "gpt-5.5".into(),
            temperature: 1.0,
            timeout_secs: 300.0,
            max_retries: 1,
            extra: Default::default(),
        }
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        RemoteBackend { config, api_key, agent }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        for (k, v) in &self.config.extra {
            body[k] = v.clone();
        }
        body
    }
}

impl ProposalBackend for RemoteBackend {
    fn name(&self) -> String {
        format!("remote:{}", self.config.model_name)
    }

    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(self.request_body(&request.rendered_text)) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(BackendError::Timeout(self.config.timeout_secs)),
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status == 401 || status == 403 || status == 404 {
            return Err(BackendError::Unavailable(format!("HTTP {status} from {}", self.endpoint())));
        }
        if status >= 400 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| BackendError::Transport(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }

    fn max_retries(&self) -> usize {
        self.config.max_retries
    }
}
