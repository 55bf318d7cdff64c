//! Adapter for TRIP-style plausible/implausible story pairs.
//!
//! The one sentence on which the two stories differ becomes the A chunk
//! (plausible = affirmed, implausible = negated) and the breakpoint sentence
//! becomes the critical region.

use serde::{Deserialize, Serialize};

use super::io::validate_corpus;
use super::{Chunk, ChunkRole, Corpus, CorpusError, CorpusSource, StoryTemplate};
use crate::text::char_len;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    #[serde(deserialize_with = "id_string")]
    pub pair_id: String,
    pub plausible: Vec<String>,
    pub implausible: Vec<String>,
    /// 0-based index of the breakpoint sentence.
    pub breakpoint: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

fn id_string<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

/// Parses JSON lines; blank lines are ignored.
pub fn parse_trip_jsonl(raw: &str, origin: &str) -> Result<Vec<TripRecord>, CorpusError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: origin.to_string(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn skipped_split(split: Option<&str>) -> bool {
    split.is_some_and(|s| {
        let s = s.to_ascii_lowercase();
        s.starts_with("order") || s == "train"
    })
}

fn template_from_pair(r: &TripRecord) -> Result<StoryTemplate, CorpusError> {
    let id = r.pair_id.as_str();
    if r.plausible.len() != r.implausible.len() {
        return Err(CorpusError::schema(id, "implausible", "plausible and implausible stories differ in length"));
    }
    let n = r.plausible.len();
    if r.breakpoint >= n {
        return Err(CorpusError::schema(id, "breakpoint", format!("breakpoint {} out of range for {n} sentences", r.breakpoint)));
    }
    let diffs: Vec<usize> = (0..n).filter(|&i| r.plausible[i].trim() != r.implausible[i].trim()).collect();
    let d = match diffs.as_slice() {
        [d] => *d,
        [] => return Err(CorpusError::schema(id, "implausible", "stories are identical")),
        _ => return Err(CorpusError::schema(id, "implausible", format!("stories differ in {} sentences", diffs.len()))),
    };
    if d >= r.breakpoint {
        return Err(CorpusError::schema(id, "breakpoint", "differing sentence must precede the breakpoint"));
    }
    if d == 0 {
        return Err(CorpusError::schema(id, "implausible", "differing sentence is the opening sentence"));
    }
    let shared: Vec<Chunk> = (0..n)
        .filter(|&i| i != d)
        .enumerate()
        .map(|(k, i)| {
            let role = if i == 0 {
                ChunkRole::Initiation
            } else if i == r.breakpoint {
                ChunkRole::ChunkB
            } else if i > r.breakpoint {
                ChunkRole::PostB
            } else {
                ChunkRole::Intermediate
            };
            Chunk::new(k, role, r.plausible[i].trim())
        })
        .collect();
    let b_text = r.plausible[r.breakpoint].trim().to_string();
    Ok(StoryTemplate {
        story_id: r.pair_id.clone(),
        topic: r.pair_id.clone(),
        shared_chunks: shared,
        chunk_a_affirmed: r.plausible[d].trim().to_string(),
        chunk_a_negated: r.implausible[d].trim().to_string(),
        chunk_a_position: d,
        region_b_span: (0, char_len(&b_text)),
        event_a_text: r.plausible[d].trim().to_string(),
        event_b_text: b_text,
        event_not_a_text: Some(r.implausible[d].trim().to_string()),
        allow_omission: false,
    })
}

/// Converts story pairs into a validated corpus. Records from "Order" or train splits are skipped.
pub fn adapt_trip(records: &[TripRecord]) -> Result<Corpus, CorpusError> {
    let stories = records
        .iter()
        .filter(|r| !skipped_split(r.split.as_deref()))
        .map(template_from_pair)
        .collect::<Result<Vec<_>, _>>()?;
    let corpus = Corpus { name: "TRIP".into(), source: CorpusSource::Trip, stories, excluded_story_ids: vec![] };
    validate_corpus(&corpus)?;
    Ok(corpus)
}
