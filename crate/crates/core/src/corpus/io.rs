use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trip::{adapt_trip, parse_trip_jsonl};
use super::{Chunk, ChunkRole, Corpus, CorpusError, CorpusSource, StoryTemplate};
use crate::text::char_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    CskJson,
    TripJson,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    name: String,
    source: CorpusSource,
    stories: Vec<StoryFile>,
    #[serde(default)]
    excluded_story_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct StoryFile {
    story_id: String,
    topic: String,
    chunks: Vec<ChunkFile>,
    chunk_a: ChunkAFile,
    region_b: RegionBFile,
    event_a_text: String,
    event_b_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_not_a_text: Option<String>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    allow_omission: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Serialize, Deserialize)]
struct ChunkFile {
    role: ChunkRole,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct ChunkAFile {
    affirmed: String,
    negated: String,
    position: usize,
}

#[derive(Serialize, Deserialize)]
struct RegionBFile {
    chunk_index: usize,
    start: usize,
    end: usize,
}

/// Loads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: display.clone(), source })?;
    match format {
        CorpusFormat::CskJson => parse_corpus_json(&raw, &display),
        CorpusFormat::TripJson => adapt_trip(&parse_trip_jsonl(&raw, &display)?),
    }
}

/// Parses a CSK-format JSON document; `origin` names it in error messages.
pub fn parse_corpus_json(raw: &str, origin: &str) -> Result<Corpus, CorpusError> {
    let file: CorpusFile = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let stories = file.stories.into_iter().map(story_from_file).collect::<Result<Vec<_>, _>>()?;
    let corpus = Corpus {
        name: file.name,
        source: file.source,
        stories,
        excluded_story_ids: file.excluded_story_ids,
    };
    validate_corpus(&corpus)?;
    Ok(corpus)
}

fn story_from_file(s: StoryFile) -> Result<StoryTemplate, CorpusError> {
    let shared_chunks: Vec<Chunk> =
        s.chunks.into_iter().enumerate().map(|(i, c)| Chunk::new(i, c.role, c.text)).collect();
    match shared_chunks.get(s.region_b.chunk_index) {
        Some(c) if c.role == ChunkRole::ChunkB => {}
        _ => {
            return Err(CorpusError::schema(
                &s.story_id,
                "region_b.chunk_index",
                format!("chunk {} is not the chunk_b chunk", s.region_b.chunk_index),
            ))
        }
    }
    Ok(StoryTemplate {
        story_id: s.story_id,
        topic: s.topic,
        shared_chunks,
        chunk_a_affirmed: s.chunk_a.affirmed,
        chunk_a_negated: s.chunk_a.negated,
        chunk_a_position: s.chunk_a.position,
        region_b_span: (s.region_b.start, s.region_b.end),
        event_a_text: s.event_a_text,
        event_b_text: s.event_b_text,
        event_not_a_text: s.event_not_a_text,
        allow_omission: s.allow_omission,
    })
}

fn validate_story(t: &StoryTemplate) -> Result<(), CorpusError> {
    let id = t.story_id.as_str();
    let err = |field: &str, msg: String| Err(CorpusError::schema(id, field, msg));
    if id.trim().is_empty() {
        return err("story_id", "empty story_id".into());
    }
    if t.shared_chunks.is_empty() {
        return err("chunks", "story has no chunks".into());
    }
    if t.shared_chunks[0].role != ChunkRole::Initiation {
        return err("chunks[0].role", "first chunk must be the initiation chunk".into());
    }
    let count = |r: ChunkRole| t.shared_chunks.iter().filter(|c| c.role == r).count();
    if count(ChunkRole::Initiation) != 1 {
        return err("chunks", "exactly one initiation chunk required".into());
    }
    if count(ChunkRole::ChunkA) != 0 {
        return err("chunks", "chunk_a variants belong in the chunk_a field".into());
    }
    if count(ChunkRole::ChunkB) != 1 {
        return err("chunks", "exactly one chunk_b chunk required".into());
    }
    let b = t.chunk_b_shared_index().expect("counted above");
    for (i, c) in t.shared_chunks.iter().enumerate() {
        if c.text.trim().is_empty() {
            return err(&format!("chunks[{i}].text"), "empty chunk text".into());
        }
        let ok = match c.role {
            ChunkRole::PostB => i > b,
            ChunkRole::Intermediate => i < b,
            _ => true,
        };
        if !ok {
            return err(&format!("chunks[{i}].role"), format!("{:?} chunk on the wrong side of chunk_b", c.role));
        }
    }
    if t.chunk_a_affirmed.trim().is_empty() {
        return err("chunk_a.affirmed", "empty affirmed variant".into());
    }
    if t.chunk_a_negated.trim().is_empty() {
        return err("chunk_a.negated", "empty negated variant".into());
    }
    // A is inserted after the initiation chunk and before B.
    if t.chunk_a_position == 0 || t.chunk_a_position > b {
        return err(
            "chunk_a.position",
            format!("position {} must lie in 1..={b} (before chunk_b)", t.chunk_a_position),
        );
    }
    let (start, end) = t.region_b_span;
    let b_len = char_len(&t.shared_chunks[b].text);
    if start >= end || end > b_len {
        return err(
            "region_b",
            format!("span [{start}, {end}) is empty or exceeds chunk_b length {b_len}"),
        );
    }
    Ok(())
}

/// Checks every story invariant plus corpus-level id constraints.
pub fn validate_corpus(corpus: &Corpus) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for s in &corpus.stories {
        validate_story(s)?;
        if !seen.insert(s.story_id.as_str()) {
            return Err(CorpusError::schema(&s.story_id, "story_id", "duplicate story_id"));
        }
    }
    for ex in &corpus.excluded_story_ids {
        if !seen.contains(ex.as_str()) {
            return Err(CorpusError::schema(ex, "excluded_story_ids", "excluded id does not name a story"));
        }
    }
    Ok(())
}

fn to_file(corpus: &Corpus) -> CorpusFile {
    CorpusFile {
        name: corpus.name.clone(),
        source: corpus.source,
        stories: corpus
            .stories
            .iter()
            .map(|s| StoryFile {
                story_id: s.story_id.clone(),
                topic: s.topic.clone(),
                chunks: s.shared_chunks.iter().map(|c| ChunkFile { role: c.role, text: c.text.clone() }).collect(),
                chunk_a: ChunkAFile {
                    affirmed: s.chunk_a_affirmed.clone(),
                    negated: s.chunk_a_negated.clone(),
                    position: s.chunk_a_position,
                },
                region_b: RegionBFile {
                    chunk_index: s.chunk_b_shared_index().unwrap_or(0),
                    start: s.region_b_span.0,
                    end: s.region_b_span.1,
                },
                event_a_text: s.event_a_text.clone(),
                event_b_text: s.event_b_text.clone(),
                event_not_a_text: s.event_not_a_text.clone(),
                allow_omission: s.allow_omission,
            })
            .collect(),
        excluded_story_ids: corpus.excluded_story_ids.clone(),
    }
}

impl Corpus {
    /// CSK-format JSON (pretty-printed, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&to_file(self)).expect("corpus serializes");
        s.push('\n');
        s
    }
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, corpus.to_json())
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}
