use std::collections::BTreeMap;

use serde::Serialize;

use super::{realize, ChunkRole, Condition, Corpus, CorpusError, RealizedStory};
use crate::scalar::mean_sd;
use crate::text::word_count;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    fn of(xs: &[usize]) -> Option<MeanSd> {
        let v: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
        mean_sd(&v).map(|(mean, sd)| MeanSd { mean, sd, n: xs.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionStats {
    pub words_per_story: MeanSd,
    pub chunks_per_story: MeanSd,
    /// `None` under omission.
    pub words_between_a_and_b: Option<MeanSd>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub stories: usize,
    pub per_condition: BTreeMap<Condition, ConditionStats>,
    pub words_in_chunk_with_a: Option<MeanSd>,
    pub words_in_chunk_with_not_a: Option<MeanSd>,
    pub words_in_chunk_with_b: MeanSd,
    pub words_in_chunk_after_b: Option<MeanSd>,
    pub words_in_a: Option<MeanSd>,
    pub words_in_not_a: Option<MeanSd>,
    pub words_in_b: MeanSd,
}

/// Words in the chunks strictly between the A chunk and the B chunk.
pub fn words_between_a_and_b(story: &RealizedStory) -> Option<usize> {
    let a = story.chunk_a_index()?;
    let b = story.chunk_b_index();
    Some(story.chunks[a + 1..b].iter().map(|c| word_count(&c.text)).sum())
}

/// Descriptive statistics over the non-excluded stories of `corpus`.
pub fn descriptive_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    let stories: Vec<_> = corpus.included_stories().collect();
    if stories.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut per_condition = BTreeMap::new();
    for cond in Condition::ALL {
        let realized: Vec<RealizedStory> = stories
            .iter()
            .filter(|t| t.supports(cond))
            .map(|t| realize(t, cond))
            .collect::<Result<_, _>>()?;
        if realized.is_empty() {
            continue;
        }
        let words: Vec<usize> = realized.iter().map(|r| word_count(&r.full_text)).collect();
        let chunks: Vec<usize> = realized.iter().map(|r| r.chunks.len()).collect();
        let between: Vec<usize> = realized.iter().filter_map(words_between_a_and_b).collect();
        per_condition.insert(
            cond,
            ConditionStats {
                words_per_story: MeanSd::of(&words).expect("non-empty"),
                chunks_per_story: MeanSd::of(&chunks).expect("non-empty"),
                words_between_a_and_b: MeanSd::of(&between),
            },
        );
    }
    let chunk_a: Vec<usize> = stories.iter().map(|t| word_count(&t.chunk_a_affirmed)).collect();
    let chunk_not_a: Vec<usize> = stories.iter().map(|t| word_count(&t.chunk_a_negated)).collect();
    let chunk_b: Vec<usize> = stories.iter().filter_map(|t| t.chunk_b()).map(|c| word_count(&c.text)).collect();
    let after_b: Vec<usize> = stories
        .iter()
        .filter_map(|t| {
            let b = t.chunk_b_shared_index()?;
            t.shared_chunks.get(b + 1).filter(|c| c.role == ChunkRole::PostB).map(|c| word_count(&c.text))
        })
        .collect();
    let a: Vec<usize> = stories.iter().map(|t| word_count(&t.event_a_text)).collect();
    let not_a: Vec<usize> =
        stories.iter().filter_map(|t| t.event_not_a_text.as_deref()).map(word_count).collect();
    let b: Vec<usize> = stories.iter().filter_map(|t| t.region_b_text()).map(word_count).collect();
    Ok(CorpusStats {
        stories: stories.len(),
        per_condition,
        words_in_chunk_with_a: MeanSd::of(&chunk_a),
        words_in_chunk_with_not_a: MeanSd::of(&chunk_not_a),
        words_in_chunk_with_b: MeanSd::of(&chunk_b).expect("validated stories have chunk B"),
        words_in_chunk_after_b: MeanSd::of(&after_b),
        words_in_a: MeanSd::of(&a),
        words_in_not_a: MeanSd::of(&not_a),
        words_in_b: MeanSd::of(&b).expect("validated stories have region B"),
    })
}
