//! Region-B surprisal from token log-probabilities.

mod align;
mod backend;
mod cache;
mod output;
mod reference;
mod remote;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Condition, CorpusError};

pub use align::{align_region, Aligned};
pub use backend::{BackendDescriptor, EndpointConfig, ScoreRequest, ScoreResponse, ScoringBackend, WireProtocol, WireToken};
pub use cache::CachingBackend;
pub use output::{read_summary_csv, write_summary_csv, write_token_csv, RegionSummary, TOKEN_CSV_HEADER};
pub use reference::{MlmContext, ReferenceBackend};
pub use remote::RemoteBackend;
pub use run::{score_clm, score_corpus, score_mlm, score_story, RateLimit, ScoreFailure, ScoreRun, ScoringOptions};

/// Floor applied to probabilities a backend reports as exactly zero.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("probability {0} outside (0, 1]")]
    DomainError(f64),
    #[error("backend {backend} unavailable: {message}")]
    BackendUnavailable { backend: String, message: String },
    #[error("token alignment failed: {0}")]
    AlignmentError(String),
    #[error("region B of {story_id} ({condition}) is empty")]
    EmptyRegion { story_id: String, condition: Condition },
    #[error("backend {0} cannot score masked tokens")]
    MaskUnsupported(String),
    #[error("backend {backend} does not support {mode} scoring")]
    ModeUnsupported { backend: String, mode: Mode },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("cache {path}: {source}")]
    Cache { path: String, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ScoringError {
    /// Worth retrying the same request.
    pub fn is_transient(&self) -> bool {
        matches!(self, ScoringError::BackendUnavailable { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Clm,
    Mlm,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Clm => "CLM",
            Mode::Mlm => "MLM",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "clm" => Ok(Mode::Clm),
            "mlm" => Ok(Mode::Mlm),
            _ => Err(format!("unknown mode {s:?} (expected clm or mlm)")),
        }
    }
}

/// Which surprisal aggregate becomes the analysed response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    PerWord,
    PerToken,
}

impl std::str::FromStr for Aggregate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per_word" => Ok(Aggregate::PerWord),
            "per_token" => Ok(Aggregate::PerToken),
            _ => Err(format!("unknown aggregate {s:?} (expected per_word or per_token)")),
        }
    }
}

/// `-ln p` for `0 < p <= 1`.
pub fn surprisal(p: f64) -> Result<f64, ScoringError> {
    if p > 0.0 && p <= 1.0 {
        Ok(-p.ln())
    } else {
        Err(ScoringError::DomainError(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    /// `[start, end)` in characters of the full story text.
    pub char_span: (usize, usize),
    pub logprob: f64,
    pub surprisal_nats: f64,
    /// The backend reported probability zero and the floor was applied.
    pub clamped: bool,
}

impl TokenScore {
    /// Validates a backend log-probability; `-inf` is floored, tiny positive rounding noise is zeroed.
    pub fn from_logprob(token_text: String, char_span: (usize, usize), logprob: f64) -> Result<Self, ScoringError> {
        if logprob.is_nan() || logprob > 1e-9 {
            return Err(ScoringError::InvalidResponse(format!("log-probability {logprob} for token {token_text:?}")));
        }
        let floor = PROBABILITY_FLOOR.ln();
        let (logprob, clamped) = if logprob < floor { (floor, logprob == f64::NEG_INFINITY) } else { (logprob.min(0.0), false) };
        Ok(TokenScore { token_text, char_span, logprob, surprisal_nats: -logprob + 0.0, clamped })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub story_id: String,
    pub condition: Condition,
    pub mode: Mode,
    pub backend_name: String,
    pub token_scores: Vec<TokenScore>,
    /// Token indices per whitespace word of the region, in order.
    pub word_groups: Vec<Vec<usize>>,
    pub mean_per_word_surprisal: f64,
    pub mean_per_token_surprisal: f64,
    pub total_nll: f64,
    /// Characters of the story visible to the backend (region end for CLM, full text for MLM).
    pub context_chars: usize,
}

impl RegionScore {
    pub fn new(
        story_id: &str,
        condition: Condition,
        mode: Mode,
        backend_name: &str,
        token_scores: Vec<TokenScore>,
        word_groups: Vec<Vec<usize>>,
        context_chars: usize,
    ) -> Self {
        let (total_nll, per_token, per_word) = aggregate(&token_scores, &word_groups);
        RegionScore {
            story_id: story_id.to_string(),
            condition,
            mode,
            backend_name: backend_name.to_string(),
            token_scores,
            word_groups,
            mean_per_word_surprisal: per_word,
            mean_per_token_surprisal: per_token,
            total_nll,
            context_chars,
        }
    }

    pub fn summary(&self) -> RegionSummary {
        RegionSummary {
            story_id: self.story_id.clone(),
            condition: self.condition,
            mode: self.mode,
            backend: self.backend_name.clone(),
            n_tokens: self.token_scores.len(),
            n_words: self.word_groups.len(),
            mean_per_word_surprisal: self.mean_per_word_surprisal,
            mean_per_token_surprisal: self.mean_per_token_surprisal,
            total_nll: self.total_nll,
        }
    }
}

/// `(total, mean per token, mean over words of summed token surprisal)`.
pub fn aggregate(tokens: &[TokenScore], words: &[Vec<usize>]) -> (f64, f64, f64) {
    let total: f64 = tokens.iter().map(|t| t.surprisal_nats).sum();
    let per_token = if tokens.is_empty() { 0.0 } else { total / tokens.len() as f64 };
    let per_word = if words.is_empty() {
        0.0
    } else {
        words.iter().map(|g| g.iter().map(|&i| tokens[i].surprisal_nats).sum::<f64>()).sum::<f64>() / words.len() as f64
    };
    (total, per_token, per_word)
}
