//! Turning experiment events and region scores into trial tables.

use std::collections::BTreeMap;

use serde::Serialize;

use super::table::{ResponseKind, TrialRow, TrialTable};
use super::StatsError;
use crate::corpus::{realize, ChunkRole, Condition, Corpus, RealizedStory};
use crate::experiment::{ChunkEvent, ChunkEventRow, Question, RatingEvent, RatingRow, SessionPlan};
use crate::scoring::{Aggregate, RegionSummary};

/// Chunk-B reading times outside `[RT_MIN_MS, RT_MAX_MS]` are dropped; the bounds themselves are kept.
pub const RT_MIN_MS: i64 = 100;
pub const RT_MAX_MS: i64 = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExclusionReport {
    /// Chunk-B trials before any exclusion.
    pub raw_trials: usize,
    pub excluded_story_trials: usize,
    pub rt_excluded: usize,
    pub kept: usize,
    /// `rt_excluded` as a percentage of trials remaining after story exclusion.
    pub loss_percent: f64,
}

impl ExclusionReport {
    pub fn summary(&self) -> String {
        format!(
            "{} of {} trials removed by the reading-time filter ({:.2}% data loss); {} trials on excluded stories",
            self.rt_excluded,
            self.raw_trials - self.excluded_story_trials,
            self.loss_percent,
            self.excluded_story_trials
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PrepareError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown story {0}")]
    UnknownStory(String),
    #[error("session {session_id} has no trial {trial_index} with chunk {chunk_index}")]
    UnknownTrial { session_id: String, trial_index: usize, chunk_index: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub fn keep_rt(rt_ms: i64) -> bool {
    (RT_MIN_MS..=RT_MAX_MS).contains(&rt_ms)
}

struct BTrial<'a> {
    participant_id: &'a str,
    story_id: &'a str,
    condition: Condition,
    rt_ms: i64,
    char_count: usize,
}

fn filter_b_trials<'a>(trials: impl IntoIterator<Item = BTrial<'a>>, corpus: &Corpus) -> Result<(TrialTable, ExclusionReport), PrepareError> {
    let mut rows = Vec::new();
    let (mut raw, mut story_excl, mut rt_excl) = (0, 0, 0);
    for t in trials {
        raw += 1;
        if corpus.is_excluded(t.story_id) {
            story_excl += 1;
            continue;
        }
        if !keep_rt(t.rt_ms) {
            rt_excl += 1;
            continue;
        }
        rows.push(TrialRow::new(Some(t.participant_id), t.story_id, t.condition, t.rt_ms as f64 / t.char_count as f64));
    }
    let eligible = raw - story_excl;
    let report = ExclusionReport {
        raw_trials: raw,
        excluded_story_trials: story_excl,
        rt_excluded: rt_excl,
        kept: rows.len(),
        loss_percent: if eligible == 0 { 0.0 } else { 100.0 * rt_excl as f64 / eligible as f64 },
    };
    Ok((TrialTable::new(ResponseKind::RtMsPerChar, rows)?, report))
}

/// One row per chunk-B event with response `rt_ms / char_count` (ms per character).
pub fn prepare_rt_table(
    events: &[ChunkEvent],
    sessions: &[SessionPlan],
    corpus: &Corpus,
) -> Result<(TrialTable, ExclusionReport), PrepareError> {
    let plans: BTreeMap<&str, &SessionPlan> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut realized: BTreeMap<(&str, usize), RealizedStory> = BTreeMap::new();
    let mut located = Vec::new();
    for e in events {
        let plan = plans.get(e.session_id.as_str()).ok_or_else(|| PrepareError::UnknownSession(e.session_id.clone()))?;
        let unknown_trial =
            || PrepareError::UnknownTrial { session_id: e.session_id.clone(), trial_index: e.trial_index, chunk_index: e.chunk_index };
        let trial = plan.trials.get(e.trial_index).ok_or_else(unknown_trial)?;
        let key = (e.session_id.as_str(), e.trial_index);
        if !realized.contains_key(&key) {
            let tmpl = corpus.story(&trial.story_id).ok_or_else(|| PrepareError::UnknownStory(trial.story_id.clone()))?;
            let story = realize(tmpl, trial.condition).map_err(|_| PrepareError::UnknownStory(trial.story_id.clone()))?;
            realized.insert(key, story);
        }
        let chunk = realized[&key].chunks.get(e.chunk_index).ok_or_else(unknown_trial)?;
        if chunk.role == ChunkRole::ChunkB {
            located.push((plan, trial, e.rt_ms, chunk.char_count));
        }
    }
    let trials = located.into_iter().map(|(plan, trial, rt_ms, char_count)| BTrial {
        participant_id: &plan.participant_id,
        story_id: &trial.story_id,
        condition: trial.condition,
        rt_ms,
        char_count,
    });
    filter_b_trials(trials, corpus)
}

/// [`prepare_rt_table`] over an exported chunk-event CSV, which already carries roles and character counts.
pub fn prepare_rt_table_from_export(rows: &[ChunkEventRow], corpus: &Corpus) -> Result<(TrialTable, ExclusionReport), PrepareError> {
    for r in rows {
        if corpus.story(&r.story_id).is_none() {
            return Err(PrepareError::UnknownStory(r.story_id.clone()));
        }
    }
    let trials = rows.iter().filter(|r| r.chunk_role == ChunkRole::ChunkB).map(|r| BTrial {
        participant_id: &r.participant_id,
        story_id: &r.story_id,
        condition: r.condition,
        rt_ms: r.rt_ms,
        char_count: r.char_count,
    });
    filter_b_trials(trials, corpus)
}

/// One row per region with the chosen surprisal aggregate as response.
pub fn prepare_surprisal_table(scores: &[RegionSummary], aggregate: Aggregate) -> Result<TrialTable, StatsError> {
    if let Some(first) = scores.first() {
        if let Some(other) = scores.iter().find(|s| s.backend != first.backend || s.mode != first.mode) {
            return Err(StatsError::MixedBackends(format!(
                "{} ({}) and {} ({})",
                first.backend, first.mode, other.backend, other.mode
            )));
        }
    }
    let rows = scores
        .iter()
        .map(|s| {
            let response = match aggregate {
                Aggregate::PerWord => s.mean_per_word_surprisal,
                Aggregate::PerToken => s.mean_per_token_surprisal,
            };
            TrialRow::new(None, &s.story_id, s.condition, response)
        })
        .collect();
    TrialTable::new(ResponseKind::SurprisalNats, rows)
}

/// Likert responses to one question, one row per rated trial.
pub fn prepare_rating_table(
    ratings: &[RatingEvent],
    sessions: &[SessionPlan],
    question: Question,
) -> Result<TrialTable, PrepareError> {
    let plans: BTreeMap<&str, &SessionPlan> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut rows = Vec::new();
    for r in ratings.iter().filter(|r| r.question == question) {
        let plan = plans.get(r.session_id.as_str()).ok_or_else(|| PrepareError::UnknownSession(r.session_id.clone()))?;
        let trial = plan.trials.get(r.trial_index).ok_or_else(|| PrepareError::UnknownTrial {
            session_id: r.session_id.clone(),
            trial_index: r.trial_index,
            chunk_index: 0,
        })?;
        rows.push(TrialRow::new(Some(&plan.participant_id), &trial.story_id, trial.condition, r.value as f64));
    }
    Ok(TrialTable::new(ResponseKind::Likert0to7, rows)?)
}

/// [`prepare_rating_table`] over an exported ratings CSV.
pub fn prepare_rating_table_from_export(rows: &[RatingRow], question: Question) -> Result<TrialTable, StatsError> {
    let rows = rows
        .iter()
        .filter(|r| r.question == question)
        .map(|r| TrialRow::new(Some(&r.participant_id), &r.story_id, r.condition, r.value as f64))
        .collect();
    TrialTable::new(ResponseKind::Likert0to7, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::garden;
    use crate::corpus::CorpusSource;
    use crate::experiment::TrialSpec;
    use crate::scoring::Mode;

    fn setup(n_sessions: usize) -> (Corpus, Vec<SessionPlan>) {
        let mut other = garden();
        other.story_id = "bowling".into();
        other.topic = "bowling".into();
        let corpus = Corpus {
            name: "c".into(),
            source: CorpusSource::Csk,
            stories: vec![garden(), other],
            excluded_story_ids: vec!["bowling".into()],
        };
        let plans = (0..n_sessions)
            .map(|i| SessionPlan {
                session_id: format!("sess{i}"),
                participant_id: format!("p{i}"),
                seed: 0,
                counterbalance_index: 0,
                trials: vec![
                    TrialSpec { story_id: garden().story_id, condition: Condition::AffirmedAB },
                    TrialSpec { story_id: "bowling".into(), condition: Condition::NegatedAB },
                ],
                created_at: 0,
            })
            .collect();
        (corpus, plans)
    }

    fn b_event(session: usize, trial: usize, rt: i64) -> ChunkEvent {
        let b = realize(&garden(), Condition::AffirmedAB).unwrap().chunk_b_index();
        ChunkEvent {
            session_id: format!("sess{session}"),
            trial_index: trial,
            chunk_index: b,
            shown_at: 1000,
            advanced_at: 1000 + rt,
            rt_ms: rt,
            server_received_at: 0,
        }
    }

    #[test]
    fn boundary_values_and_per_char_response() {
        let (corpus, plans) = setup(4);
        let events: Vec<ChunkEvent> = [99, 100, 50_000, 50_001].iter().enumerate().map(|(i, &rt)| b_event(i, 0, rt)).collect();
        let (table, report) = prepare_rt_table(&events, &plans, &corpus).unwrap();
        assert_eq!(report.kept, 2);
        assert_eq!(report.rt_excluded, 2);
        let chars = realize(&garden(), Condition::AffirmedAB).unwrap().chunk_b().char_count as f64;
        let responses: Vec<f64> = table.rows().iter().map(|r| r.response).collect();
        assert_eq!(responses, vec![100.0 / chars, 50_000.0 / chars]);
    }

    #[test]
    fn excluded_stories_and_non_b_chunks_are_dropped() {
        let (corpus, plans) = setup(1);
        let mut first = b_event(0, 0, 2000);
        first.chunk_index = 0;
        let events = vec![first, b_event(0, 0, 2000), b_event(0, 1, 2000)];
        let (table, report) = prepare_rt_table(&events, &plans, &corpus).unwrap();
        assert_eq!((report.raw_trials, report.excluded_story_trials, table.len()), (2, 1, 1));
        let mut bad = b_event(0, 0, 2000);
        bad.session_id = "ghost".into();
        assert!(matches!(prepare_rt_table(&[bad], &plans, &corpus), Err(PrepareError::UnknownSession(_))));
    }

    #[test]
    fn surprisal_tables_reject_mixed_backends() {
        let s = |b: &str, c| RegionSummary {
            story_id: "s".into(),
            condition: c,
            mode: Mode::Clm,
            backend: b.into(),
            n_tokens: 3,
            n_words: 2,
            mean_per_word_surprisal: 6.0,
            mean_per_token_surprisal: 4.0,
            total_nll: 12.0,
        };
        let t = prepare_surprisal_table(&[s("a", Condition::AffirmedAB), s("a", Condition::NegatedAB)], Aggregate::PerToken).unwrap();
        assert_eq!(t.rows()[0].response, 4.0);
        assert!(matches!(
            prepare_surprisal_table(&[s("a", Condition::AffirmedAB), s("b", Condition::NegatedAB)], Aggregate::PerWord),
            Err(StatsError::MixedBackends(_))
        ));
    }
}
