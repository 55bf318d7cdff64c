//! Deterministic in-process backend: an add-one-smoothed word bigram model.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::{BackendDescriptor, Mode, ScoreRequest, ScoreResponse, ScoringBackend, ScoringError, WireToken};
use crate::text::word_spans;

const START: &str = "<s>";
const UNK: &str = "<unk>";

/// Context used when scoring a masked token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MlmContext {
    /// `P(w | prev, next) ∝ P(w | prev) P(next | w)`.
    #[default]
    Bidirectional,
    /// Ignores right context; masked scores equal CLM scores.
    LeftOnly,
}

#[derive(Clone, Debug)]
pub struct ReferenceBackend {
    descriptor: BackendDescriptor,
    vocab: BTreeSet<String>,
    bigrams: BTreeMap<(String, String), u64>,
    history: BTreeMap<String, u64>,
    mlm_context: MlmContext,
}

/// Lookup key: lowercase with leading/trailing punctuation removed.
pub(crate) fn normalize(word: &str) -> String {
    let lower = word.to_lowercase();
    let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        lower
    } else {
        trimmed.to_string()
    }
}

impl ReferenceBackend {
    /// Builds the model from seed sentences or documents. Panics on an empty seed.
    pub fn new(seed: &[String]) -> Self {
        Self::named("ref", seed)
    }

    pub fn named(name: &str, seed: &[String]) -> Self {
        assert!(seed.iter().any(|s| !s.trim().is_empty()), "reference backend needs a non-empty seed corpus");
        let mut vocab = BTreeSet::new();
        let mut bigrams = BTreeMap::new();
        let mut history = BTreeMap::new();
        let mut hasher = Sha256::new();
        for doc in seed {
            hasher.update((doc.len() as u64).to_le_bytes());
            hasher.update(doc.as_bytes());
            let mut prev = START.to_string();
            for (s, e) in word_spans(doc) {
                let w = normalize(&doc.chars().skip(s).take(e - s).collect::<String>());
                vocab.insert(w.clone());
                *bigrams.entry((prev.clone(), w.clone())).or_insert(0) += 1;
                *history.entry(prev).or_insert(0) += 1;
                prev = w;
            }
        }
        let descriptor = BackendDescriptor {
            name: name.to_string(),
            supports_clm: true,
            supports_mlm: true,
            endpoint: None,
            fingerprint: format!("bigram-add1:{}", hex::encode(hasher.finalize())),
        };
        ReferenceBackend { descriptor, vocab, bigrams, history, mlm_context: MlmContext::Bidirectional }
    }

    pub fn with_mlm_context(mut self, ctx: MlmContext) -> Self {
        self.mlm_context = ctx;
        if ctx == MlmContext::LeftOnly {
            self.descriptor.fingerprint.push_str(":left");
        }
        self
    }

    /// Vocabulary size including the unknown-word symbol.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    fn key<'a>(&self, w: &'a str) -> &'a str {
        if self.vocab.contains(w) {
            w
        } else {
            UNK
        }
    }

    /// `P(w | h)` over normalized keys; `h` may be `<s>`.
    pub fn probability(&self, history: &str, word: &str) -> f64 {
        let h = if history == START { START.to_string() } else { self.key(&normalize(history)).to_string() };
        let w = self.key(&normalize(word)).to_string();
        self.prob_keys(&h, &w)
    }

    fn prob_keys(&self, h: &str, w: &str) -> f64 {
        let c_hw = if w == UNK { 0 } else { self.bigrams.get(&(h.to_string(), w.to_string())).copied().unwrap_or(0) };
        let c_h = self.history.get(h).copied().unwrap_or(0);
        (c_hw as f64 + 1.0) / (c_h as f64 + self.vocab_size() as f64)
    }

    fn keys(&self, text: &str) -> (Vec<(usize, usize)>, Vec<String>, Vec<String>) {
        let chars: Vec<char> = text.chars().collect();
        let spans = word_spans(text);
        let surface: Vec<String> = spans.iter().map(|&(s, e)| chars[s..e].iter().collect()).collect();
        let keys = surface.iter().map(|w| self.key(&normalize(w)).to_string()).collect();
        (spans, surface, keys)
    }

    fn masked_probability(&self, keys: &[String], i: usize) -> f64 {
        let prev = if i == 0 { START } else { keys[i - 1].as_str() };
        let left = self.prob_keys(prev, &keys[i]);
        if self.mlm_context == MlmContext::LeftOnly || i + 1 == keys.len() {
            return left;
        }
        let next = keys[i + 1].as_str();
        let joint = |w: &str| self.prob_keys(prev, w) * self.prob_keys(w, next);
        let norm: f64 = self.vocab.iter().map(|w| joint(w)).sum::<f64>() + joint(UNK);
        joint(&keys[i]) / norm
    }
}

impl ScoringBackend for ReferenceBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ScoringError> {
        let (spans, surface, keys) = self.keys(&req.text);
        let tok = |i: usize, logprob: Option<f64>| WireToken { text: surface[i].clone(), start: spans[i].0, end: spans[i].1, logprob };
        let tokens = match (req.mode, req.mask_index) {
            (Mode::Clm, None) => (0..keys.len())
                .map(|i| {
                    let prev = if i == 0 { START } else { keys[i - 1].as_str() };
                    tok(i, Some(self.prob_keys(prev, &keys[i]).ln()))
                })
                .collect(),
            (Mode::Clm, Some(_)) => {
                return Err(ScoringError::InvalidResponse("mask_index is only valid in MLM mode".into()));
            }
            (Mode::Mlm, None) => (0..keys.len()).map(|i| tok(i, None)).collect(),
            (Mode::Mlm, Some(m)) => {
                if m >= keys.len() {
                    return Err(ScoringError::InvalidResponse(format!("mask_index {m} out of range")));
                }
                (0..keys.len())
                    .map(|i| tok(i, (i == m).then(|| self.masked_probability(&keys, i).ln())))
                    .collect()
            }
        };
        Ok(ScoreResponse { tokens })
    }
}
