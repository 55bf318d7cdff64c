//! Condition-manipulable script stories.
//!
//! A [`StoryTemplate`] holds the chunks shared by every condition plus the two
//! authored variants of the chunk carrying event A. [`realize`] turns a
//! template into the text a reader (or a language model) actually sees under
//! one [`Condition`].

mod io;
mod stats;
mod trip;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, char_slice};

pub use io::{load_corpus, parse_corpus_json, validate_corpus, write_corpus, CorpusFormat};
pub use stats::{descriptive_stats, words_between_a_and_b, ConditionStats, CorpusStats, MeanSd};
pub use trip::{adapt_trip, parse_trip_jsonl, TripRecord};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("schema error in story {story_id:?}, field {field}: {message}")]
    Schema { story_id: String, field: String, message: String },
    #[error("condition {condition} is not available for story {story_id:?}")]
    UnsupportedCondition { story_id: String, condition: Condition },
    #[error("corpus has no stories to describe")]
    EmptyCorpus,
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CorpusError {
    pub(crate) fn schema(story_id: &str, field: &str, message: impl Into<String>) -> Self {
        CorpusError::Schema { story_id: story_id.to_string(), field: field.to_string(), message: message.into() }
    }
}

/// Which version of event A precedes event B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "A->B")]
    AffirmedAB,
    #[serde(rename = "notA->B")]
    NegatedAB,
    #[serde(rename = "nil->B")]
    OmittedNilB,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::AffirmedAB, Condition::NegatedAB, Condition::OmittedNilB];

    pub fn label(self) -> &'static str {
        match self {
            Condition::AffirmedAB => "A->B",
            Condition::NegatedAB => "notA->B",
            Condition::OmittedNilB => "nil->B",
        }
    }

    /// Short label used in contrast names (`A`, `notA`, `nil`).
    pub fn short(self) -> &'static str {
        match self {
            Condition::AffirmedAB => "A",
            Condition::NegatedAB => "notA",
            Condition::OmittedNilB => "nil",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
#[error("unknown condition label {0:?} (expected A->B, notA->B or nil->B)")]
pub struct ParseConditionError(pub String);

impl FromStr for Condition {
    type Err = ParseConditionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A->B" | "A" => Ok(Condition::AffirmedAB),
            "notA->B" | "notA" => Ok(Condition::NegatedAB),
            "nil->B" | "nil" => Ok(Condition::OmittedNilB),
            other => Err(ParseConditionError(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkRole {
    Initiation,
    Intermediate,
    ChunkA,
    ChunkB,
    PostB,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    pub role: ChunkRole,
    pub char_count: usize,
}

impl Chunk {
    pub fn new(index: usize, role: ChunkRole, text: impl Into<String>) -> Self {
        let text = text.into();
        let char_count = char_len(&text);
        Chunk { index, text, role, char_count }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoryTemplate {
    pub story_id: String,
    pub topic: String,
    /// Chunks present in every condition; never contains a `ChunkA`.
    pub shared_chunks: Vec<Chunk>,
    pub chunk_a_affirmed: String,
    pub chunk_a_negated: String,
    /// Index of the A chunk in a realized story that contains it.
    pub chunk_a_position: usize,
    /// `[start, end)` within the `ChunkB` text.
    pub region_b_span: (usize, usize),
    pub event_a_text: String,
    pub event_b_text: String,
    pub event_not_a_text: Option<String>,
    /// False for stories (e.g. adapted TRIP pairs) that have no omission variant.
    pub allow_omission: bool,
}

impl StoryTemplate {
    pub fn chunk_b_shared_index(&self) -> Option<usize> {
        self.shared_chunks.iter().position(|c| c.role == ChunkRole::ChunkB)
    }

    pub fn chunk_b(&self) -> Option<&Chunk> {
        self.shared_chunks.iter().find(|c| c.role == ChunkRole::ChunkB)
    }

    pub fn region_b_text(&self) -> Option<&str> {
        let b = self.chunk_b()?;
        char_slice(&b.text, self.region_b_span.0, self.region_b_span.1)
    }

    pub fn supports(&self, condition: Condition) -> bool {
        condition != Condition::OmittedNilB || self.allow_omission
    }

    pub fn conditions(&self) -> Vec<Condition> {
        Condition::ALL.into_iter().filter(|c| self.supports(*c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedStory {
    pub story_id: String,
    pub condition: Condition,
    pub chunks: Vec<Chunk>,
    pub full_text: String,
    pub region_b_abs: (usize, usize),
    pub context_before_b: String,
    /// Span within the `ChunkB` text, kept so offsets can be recomputed.
    region_b_local: (usize, usize),
}

impl RealizedStory {
    /// Builds a realized story from an ordered chunk list; chunk indices are rewritten.
    fn assemble(
        story_id: &str,
        condition: Condition,
        chunks: Vec<Chunk>,
        region_b_local: (usize, usize),
    ) -> RealizedStory {
        let chunks: Vec<Chunk> =
            chunks.into_iter().enumerate().map(|(i, c)| Chunk { index: i, ..c }).collect();
        let mut offset = 0;
        let mut b_start = None;
        for c in &chunks {
            if c.role == ChunkRole::ChunkB {
                b_start = Some(offset);
            }
            offset += c.char_count + 1;
        }
        let b_start = b_start.expect("realized story has a ChunkB");
        let full_text = chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
        let region_b_abs = (b_start + region_b_local.0, b_start + region_b_local.1);
        let context_before_b = char_slice(&full_text, 0, region_b_abs.0).unwrap_or_default().to_string();
        RealizedStory {
            story_id: story_id.to_string(),
            condition,
            chunks,
            full_text,
            region_b_abs,
            context_before_b,
            region_b_local,
        }
    }

    pub fn region_text(&self) -> &str {
        char_slice(&self.full_text, self.region_b_abs.0, self.region_b_abs.1).unwrap_or_default()
    }

    pub fn chunk_b_index(&self) -> usize {
        self.chunks.iter().position(|c| c.role == ChunkRole::ChunkB).expect("ChunkB present")
    }

    pub fn chunk_a_index(&self) -> Option<usize> {
        self.chunks.iter().position(|c| c.role == ChunkRole::ChunkA)
    }

    pub fn chunk_b(&self) -> &Chunk {
        &self.chunks[self.chunk_b_index()]
    }
}

/// Realizes `template` under `condition`.
pub fn realize(template: &StoryTemplate, condition: Condition) -> Result<RealizedStory, CorpusError> {
    if !template.supports(condition) {
        return Err(CorpusError::UnsupportedCondition { story_id: template.story_id.clone(), condition });
    }
    let mut chunks = template.shared_chunks.clone();
    let a_text = match condition {
        Condition::AffirmedAB => Some(&template.chunk_a_affirmed),
        Condition::NegatedAB => Some(&template.chunk_a_negated),
        Condition::OmittedNilB => None,
    };
    if let Some(text) = a_text {
        let pos = template.chunk_a_position.min(chunks.len());
        chunks.insert(pos, Chunk::new(pos, ChunkRole::ChunkA, text.clone()));
    }
    Ok(RealizedStory::assemble(&template.story_id, condition, chunks, template.region_b_span))
}

/// Removes every intermediate chunk strictly between event A (or the
/// initiation chunk when A is omitted) and the chunk carrying event B.
pub fn shorten_distance(realized: &RealizedStory) -> RealizedStory {
    let b = realized.chunk_b_index();
    let anchor = realized
        .chunk_a_index()
        .or_else(|| realized.chunks.iter().position(|c| c.role == ChunkRole::Initiation))
        .unwrap_or(0);
    let chunks: Vec<Chunk> = realized
        .chunks
        .iter()
        .enumerate()
        .filter(|(i, c)| !(*i > anchor && *i < b && c.role == ChunkRole::Intermediate))
        .map(|(_, c)| c.clone())
        .collect();
    RealizedStory::assemble(&realized.story_id, realized.condition, chunks, realized.region_b_local)
}

/// Template-level counterpart of [`shorten_distance`] used to derive a short-distance corpus.
///
/// Drops shared intermediate chunks between the A insertion point and B, so
/// the affirmed and negated realizations equal `shorten_distance(realize(..))`.
/// Omission realizations keep the chunks that precede the A position.
pub fn shorten_template(template: &StoryTemplate) -> StoryTemplate {
    let b = template.chunk_b_shared_index().unwrap_or(template.shared_chunks.len());
    let pos = template.chunk_a_position;
    let shared: Vec<Chunk> = template
        .shared_chunks
        .iter()
        .enumerate()
        .filter(|(i, c)| !(*i >= pos && *i < b && c.role == ChunkRole::Intermediate))
        .enumerate()
        .map(|(new_i, (_, c))| Chunk { index: new_i, ..c.clone() })
        .collect();
    StoryTemplate { shared_chunks: shared, ..template.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusSource {
    #[serde(rename = "CSK")]
    Csk,
    #[serde(rename = "TRIP")]
    Trip,
    Derived,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub source: CorpusSource,
    pub stories: Vec<StoryTemplate>,
    pub excluded_story_ids: Vec<String>,
}

impl Corpus {
    pub fn story(&self, story_id: &str) -> Option<&StoryTemplate> {
        self.stories.iter().find(|s| s.story_id == story_id)
    }

    pub fn is_excluded(&self, story_id: &str) -> bool {
        self.excluded_story_ids.iter().any(|s| s == story_id)
    }

    pub fn included_stories(&self) -> impl Iterator<Item = &StoryTemplate> {
        self.stories.iter().filter(|s| !self.is_excluded(&s.story_id))
    }

    /// Short-distance copy of the corpus (`source = Derived`).
    pub fn shortened(&self) -> Corpus {
        Corpus {
            name: self.name.clone(),
            source: CorpusSource::Derived,
            stories: self.stories.iter().map(shorten_template).collect(),
            excluded_story_ids: self.excluded_story_ids.clone(),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::garden;
    use super::*;

    #[test]
    fn condition_labels_roundtrip() {
        for c in Condition::ALL {
            assert_eq!(c.label().parse::<Condition>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.label()));
        }
        assert!("maybe".parse::<Condition>().is_err());
    }

    #[test]
    fn region_text_is_event_b() {
        assert_eq!(garden().region_b_text(), Some("fastened the stems to bamboo canes"));
    }

    #[test]
    fn affirmed_inserts_a_chunk() {
        let r = realize(&garden(), Condition::AffirmedAB).unwrap();
        assert_eq!(r.chunks[2].role, ChunkRole::ChunkA);
        assert!(r.chunks.iter().any(|c| c.text.contains("fetched a bundle of bamboo canes")));
        assert!(r.full_text.contains(&garden().chunk_a_affirmed));
        assert!(!r.full_text.contains(&garden().chunk_a_negated));
        assert_eq!(r.region_text(), "fastened the stems to bamboo canes");
        assert!(r.context_before_b.ends_with("Gently Tom "));
    }

    #[test]
    fn omission_drops_one_chunk_and_reindexes() {
        let a = realize(&garden(), Condition::AffirmedAB).unwrap();
        let nil = realize(&garden(), Condition::OmittedNilB).unwrap();
        assert_eq!(nil.chunks.len() + 1, a.chunks.len());
        assert!(nil.chunks.iter().all(|c| c.role != ChunkRole::ChunkA));
        assert!(nil.chunks.iter().enumerate().all(|(i, c)| c.index == i));
        assert!(!nil.full_text.contains(&garden().chunk_a_affirmed));
        assert!(!nil.full_text.contains(&garden().chunk_a_negated));
    }

    #[test]
    fn region_text_is_condition_independent() {
        let t = garden();
        let texts: Vec<String> =
            Condition::ALL.iter().map(|&c| realize(&t, c).unwrap().region_text().to_string()).collect();
        assert!(texts.iter().all(|x| x == "fastened the stems to bamboo canes"));
    }

    #[test]
    fn shorten_removes_intervening_chunks() {
        let a = realize(&garden(), Condition::AffirmedAB).unwrap();
        let s = shorten_distance(&a);
        assert_eq!(s.chunks.len(), a.chunks.len() - 4);
        let ai = s.chunk_a_index().unwrap();
        assert_eq!(s.chunk_b_index(), ai + 1);
        assert_eq!(s.region_text(), "fastened the stems to bamboo canes");
        assert_eq!(shorten_distance(&s), s);
    }

    #[test]
    fn shorten_under_omission_anchors_on_initiation() {
        let nil = realize(&garden(), Condition::OmittedNilB).unwrap();
        let s = shorten_distance(&nil);
        let roles: Vec<_> = s.chunks.iter().map(|c| c.role).collect();
        assert_eq!(roles, vec![ChunkRole::Initiation, ChunkRole::ChunkB, ChunkRole::PostB]);
    }

    #[test]
    fn template_shortening_matches_realized_shortening() {
        let t = garden();
        let st = shorten_template(&t);
        for c in [Condition::AffirmedAB, Condition::NegatedAB] {
            let via_template = realize(&st, c).unwrap();
            let via_story = shorten_distance(&realize(&t, c).unwrap());
            assert_eq!(via_template, via_story);
        }
        assert_eq!(shorten_template(&st), st);
    }

    #[test]
    fn omission_unavailable_when_disallowed() {
        let mut t = garden();
        t.allow_omission = false;
        assert!(matches!(
            realize(&t, Condition::OmittedNilB),
            Err(CorpusError::UnsupportedCondition { .. })
        ));
        assert_eq!(t.conditions(), vec![Condition::AffirmedAB, Condition::NegatedAB]);
    }
}
