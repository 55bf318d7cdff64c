use serde::{Deserialize, Serialize};

use super::{Mode, ScoringError};

/// Request body of the native wire protocol.
///
/// Offsets in the response are character (Unicode scalar) offsets into `text`.
/// Without `mask_index` the backend tokenizes `text`; in CLM mode each token's
/// `logprob` is conditioned on the preceding text. With `mask_index = i` (MLM)
/// the backend returns the same tokenization with token `i` scored while masked
/// and every other token visible.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
    /// Natural-log probability; absent where the backend gives none (e.g. the first token).
    #[serde(default)]
    pub logprob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<WireToken>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireProtocol {
    #[default]
    Native,
    /// `{prompt, max_tokens: 0, echo: true, logprobs: k}` completions endpoints (CLM only).
    EchoCompletions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub protocol: WireProtocol,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    /// Sent as `model` in echo-completions requests.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Requests per second across all workers.
    #[serde(default)]
    pub rate_limit: Option<f64>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    3
}

impl EndpointConfig {
    pub fn new(base_url: &str) -> Self {
        EndpointConfig {
            base_url: base_url.to_string(),
            protocol: WireProtocol::Native,
            auth_token_env: None,
            model: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            rate_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub supports_clm: bool,
    pub supports_mlm: bool,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    /// Identifies the model state for caching (e.g. a hash of the reference seed corpus).
    #[serde(default)]
    pub fingerprint: String,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        if !self.supports_clm && !self.supports_mlm {
            return Err(format!("backend {} supports neither CLM nor MLM", self.name));
        }
        if self.name.trim().is_empty() {
            return Err("backend name is empty".into());
        }
        Ok(())
    }

    pub fn supports(&self, mode: Mode) -> bool {
        match mode {
            Mode::Clm => self.supports_clm,
            Mode::Mlm => self.supports_mlm,
        }
    }
}

pub trait ScoringBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoringError>;
}

impl<B: ScoringBackend + ?Sized> ScoringBackend for &B {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoringError> {
        (**self).score(request)
    }
}

impl<B: ScoringBackend + ?Sized> ScoringBackend for Box<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoringError> {
        (**self).score(request)
    }
}
