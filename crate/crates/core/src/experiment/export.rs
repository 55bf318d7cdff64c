use serde::{Deserialize, Serialize};

use super::{ExperimentError, Question, Store};
use crate::corpus::{ChunkRole, Condition};

pub const CHUNK_CSV_HEADER: &str = "session_id,participant_id,trial_index,story_id,condition,chunk_index,chunk_role,char_count,shown_at,advanced_at,rt_ms,server_received_at";
pub const RATING_CSV_HEADER: &str = "session_id,participant_id,trial_index,story_id,condition,question,value,server_received_at";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkEventRow {
    pub session_id: String,
    pub participant_id: String,
    pub trial_index: usize,
    pub story_id: String,
    pub condition: Condition,
    pub chunk_index: usize,
    pub chunk_role: ChunkRole,
    pub char_count: usize,
    pub shown_at: i64,
    pub advanced_at: i64,
    pub rt_ms: i64,
    pub server_received_at: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub session_id: String,
    pub participant_id: String,
    pub trial_index: usize,
    pub story_id: String,
    pub condition: Condition,
    pub question: Question,
    pub value: u8,
    pub server_received_at: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamiliarityRow {
    pub session_id: String,
    pub participant_id: String,
    pub trial_index: usize,
    pub story_id: String,
    pub condition: Condition,
    pub unfamiliar: bool,
}

fn to_csv<T: Serialize>(header: &str, rows: &[T]) -> Result<String, ExperimentError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    let body = String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("utf-8");
    Ok(format!("{header}\n{body}"))
}

impl Store {
    /// Chunk events in log order.
    pub fn chunk_event_rows(&self) -> Vec<ChunkEventRow> {
        self.chunk_events()
            .into_iter()
            .map(|e| {
                let plan = self.plan(&e.session_id).expect("event for known session");
                let story = self.realized(&e.session_id, e.trial_index).expect("trial in plan");
                let chunk = &story.chunks[e.chunk_index];
                ChunkEventRow {
                    session_id: e.session_id.clone(),
                    participant_id: plan.participant_id.clone(),
                    trial_index: e.trial_index,
                    story_id: story.story_id.clone(),
                    condition: story.condition,
                    chunk_index: e.chunk_index,
                    chunk_role: chunk.role,
                    char_count: chunk.char_count,
                    shown_at: e.shown_at,
                    advanced_at: e.advanced_at,
                    rt_ms: e.rt_ms,
                    server_received_at: e.server_received_at,
                }
            })
            .collect()
    }

    pub fn rating_rows(&self) -> Vec<RatingRow> {
        self.rating_events()
            .into_iter()
            .map(|e| {
                let plan = self.plan(&e.session_id).expect("event for known session");
                let t = &plan.trials[e.trial_index];
                RatingRow {
                    session_id: e.session_id.clone(),
                    participant_id: plan.participant_id.clone(),
                    trial_index: e.trial_index,
                    story_id: t.story_id.clone(),
                    condition: t.condition,
                    question: e.question,
                    value: e.value,
                    server_received_at: e.server_received_at,
                }
            })
            .collect()
    }

    pub fn familiarity_rows(&self) -> Vec<FamiliarityRow> {
        self.familiarity_events()
            .into_iter()
            .map(|e| {
                let plan = self.plan(&e.session_id).expect("event for known session");
                let t = &plan.trials[e.trial_index];
                FamiliarityRow {
                    session_id: e.session_id.clone(),
                    participant_id: plan.participant_id.clone(),
                    trial_index: e.trial_index,
                    story_id: t.story_id.clone(),
                    condition: t.condition,
                    unfamiliar: e.unfamiliar,
                }
            })
            .collect()
    }

    /// `(chunk events CSV, ratings CSV)`, rows in log order so later events only append.
    pub fn export_trials(&self) -> Result<(String, String), ExperimentError> {
        Ok((to_csv(CHUNK_CSV_HEADER, &self.chunk_event_rows())?, to_csv(RATING_CSV_HEADER, &self.rating_rows())?))
    }

    pub fn export_familiarity(&self) -> Result<String, ExperimentError> {
        to_csv("session_id,participant_id,trial_index,story_id,condition,unfamiliar", &self.familiarity_rows())
    }
}

fn from_csv<T: serde::de::DeserializeOwned>(raw: &str) -> Result<Vec<T>, ExperimentError> {
    let mut rdr = csv::Reader::from_reader(raw.as_bytes());
    rdr.deserialize().map(|r| r.map_err(ExperimentError::from)).collect()
}

pub fn read_chunk_csv(raw: &str) -> Result<Vec<ChunkEventRow>, ExperimentError> {
    from_csv(raw)
}

pub fn read_rating_csv(raw: &str) -> Result<Vec<RatingRow>, ExperimentError> {
    from_csv(raw)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::experiment::tests::corpus;
    use crate::experiment::NextItem;

    #[test]
    fn export_counts_and_determinism() {
        let mut st = Store::in_memory(Arc::new(corpus(&["a", "b", "c"]))).with_clock(|| 7);
        for p in 0..2u64 {
            let id = st.create_session(&format!("p{p}"), p, p).unwrap().session_id;
            for t in 0..3 {
                while let NextItem::Chunk { chunk_index, .. } = st.next_chunk(&id).unwrap() {
                    st.record_advance(&id, chunk_index, 100, 2100).unwrap();
                }
                st.record_rating(&id, t, Question::EventA, 6).unwrap();
                st.record_rating(&id, t, Question::EventB, 6).unwrap();
            }
        }
        let (chunks, ratings) = st.export_trials().unwrap();
        let n_chunks = crate::corpus::realize(&crate::corpus::fixtures::garden(), Condition::AffirmedAB).unwrap().chunks.len();
        // Each session reads one story per condition; chunk counts differ only for nil.
        let rows = read_chunk_csv(&chunks).unwrap();
        assert_eq!(rows.len(), 2 * (3 * n_chunks - 1));
        assert_eq!(ratings.lines().count(), 1 + 2 * 3 * 2);
        assert!(chunks.starts_with(CHUNK_CSV_HEADER));
        assert_eq!(st.export_trials().unwrap(), (chunks, ratings));
        assert_eq!(rows.iter().filter(|r| r.chunk_role == ChunkRole::ChunkB).count(), 6);
    }
}
