//! Self-paced reading sessions: counterbalanced plans, an append-only event
//! store, and CSV export.

mod export;
mod store;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Condition, Corpus, CorpusError};

pub use export::{read_chunk_csv, read_rating_csv, ChunkEventRow, FamiliarityRow, RatingRow, CHUNK_CSV_HEADER, RATING_CSV_HEADER};
pub use store::{Event, NextItem, RatingPrompt, Store};

pub const TRIALS_PER_SESSION: usize = 3;
pub const RATING_MIN: i64 = 0;
pub const RATING_MAX: i64 = 7;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need {needed} eligible stories with distinct topics, found {found}")]
    InsufficientStories { needed: usize, found: usize },
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("session {0} already exists")]
    SessionExists(String),
    #[error("session {0} is complete")]
    SessionComplete(String),
    #[error("chunk {got} submitted while {expected} is current")]
    OutOfOrderChunk { expected: String, got: usize },
    #[error("advanced_at {advanced_at} is not after shown_at {shown_at}")]
    ClockSkew { shown_at: i64, advanced_at: i64 },
    #[error("trial {0} has unread chunks")]
    TrialIncomplete(usize),
    #[error("trial {trial_index} already has a {question:?} rating")]
    DuplicateRating { trial_index: usize, question: Question },
    #[error("trial {0} already has a familiarity response")]
    DuplicateFamiliarity(usize),
    #[error("rating {0} outside 0..=7")]
    ValueOutOfRange(i64),
    #[error("trial index {0} out of range")]
    TrialOutOfRange(usize),
    #[error("event log {path} line {line}: {message}")]
    CorruptLog { path: String, line: usize, message: String },
    #[error("event log {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Question {
    EventA,
    EventB,
}

impl Question {
    pub const ALL: [Question; 2] = [Question::EventA, Question::EventB];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub story_id: String,
    pub condition: Condition,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub participant_id: String,
    pub seed: u64,
    pub counterbalance_index: u64,
    pub trials: Vec<TrialSpec>,
    /// Milliseconds since the Unix epoch.
    pub created_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkEvent {
    pub session_id: String,
    pub trial_index: usize,
    pub chunk_index: usize,
    /// Client clock, ms.
    pub shown_at: i64,
    pub advanced_at: i64,
    pub rt_ms: i64,
    /// Server clock when the advance arrived, kept for auditing.
    pub server_received_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingEvent {
    pub session_id: String,
    pub trial_index: usize,
    pub question: Question,
    pub value: u8,
    pub server_received_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamiliarityEvent {
    pub session_id: String,
    pub trial_index: usize,
    pub unfamiliar: bool,
    pub server_received_at: i64,
}

/// Condition of story `j` under Latin-square row `r`.
pub fn latin_square_condition(row: u64, j: usize) -> Condition {
    Condition::ALL[(j + (row % 3) as usize) % 3]
}

/// Picks three stories with distinct topics (seeded) and assigns conditions by
/// Latin-square row `counterbalance_index mod 3`.
pub fn create_session(
    participant_id: &str,
    corpus: &Corpus,
    counterbalance_index: u64,
    seed: u64,
    created_at: i64,
) -> Result<SessionPlan, ExperimentError> {
    let mut by_topic: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in corpus.included_stories().filter(|s| Condition::ALL.iter().all(|c| s.supports(*c))) {
        by_topic.entry(s.topic.as_str()).or_default().push(s.story_id.as_str());
    }
    if by_topic.len() < TRIALS_PER_SESSION {
        return Err(ExperimentError::InsufficientStories { needed: TRIALS_PER_SESSION, found: by_topic.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topics: Vec<&str> = by_topic.keys().copied().collect();
    topics.shuffle(&mut rng);
    let trials = topics[..TRIALS_PER_SESSION]
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let ids = &by_topic[t];
            let story_id = ids[(rng.next_u64() % ids.len() as u64) as usize].to_string();
            TrialSpec { story_id, condition: latin_square_condition(counterbalance_index, j) }
        })
        .collect();
    let mut id_rng = ChaCha8Rng::seed_from_u64(seed ^ counterbalance_index.rotate_left(32));
    let mut bytes = [0u8; 16];
    id_rng.fill_bytes(&mut bytes);
    for b in participant_id.bytes() {
        bytes[(b as usize) % 16] ^= b;
    }
    let session_id = uuid::Builder::from_random_bytes(bytes).into_uuid().to_string();
    Ok(SessionPlan {
        session_id,
        participant_id: participant_id.to_string(),
        seed,
        counterbalance_index,
        trials,
        created_at,
    })
}
