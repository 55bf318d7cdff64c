use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{
    align_region, BackendDescriptor, CachingBackend, Mode, RegionScore, ScoreRequest, ScoreResponse, ScoringBackend,
    ScoringError, TokenScore,
};
use crate::corpus::{realize, Condition, Corpus, RealizedStory};
use crate::text::char_slice;

fn check_mode(backend: &dyn ScoringBackend, mode: Mode) -> Result<(), ScoringError> {
    let d = backend.descriptor();
    if d.supports(mode) {
        Ok(())
    } else if mode == Mode::Mlm {
        Err(ScoringError::MaskUnsupported(d.name.clone()))
    } else {
        Err(ScoringError::ModeUnsupported { backend: d.name.clone(), mode })
    }
}

fn non_empty(story: &RealizedStory) -> Result<(), ScoringError> {
    if story.region_text().trim().is_empty() {
        return Err(ScoringError::EmptyRegion { story_id: story.story_id.clone(), condition: story.condition });
    }
    Ok(())
}

fn token_score(resp: &ScoreResponse, i: usize) -> Result<TokenScore, ScoringError> {
    let t = &resp.tokens[i];
    let lp = t
        .logprob
        .ok_or_else(|| ScoringError::AlignmentError(format!("region token {i} ({:?}) has no log-probability", t.text)))?;
    TokenScore::from_logprob(t.text.clone(), (t.start, t.end), lp)
}

/// Scores region B left to right, conditioning each token on all preceding text.
pub fn score_clm(backend: &dyn ScoringBackend, story: &RealizedStory) -> Result<RegionScore, ScoringError> {
    check_mode(backend, Mode::Clm)?;
    non_empty(story)?;
    let (_, end) = story.region_b_abs;
    let prefix = char_slice(&story.full_text, 0, end).expect("region inside text");
    let resp = backend.score(&ScoreRequest { text: prefix.to_string(), mode: Mode::Clm, mask_index: None })?;
    let aligned = align_region(prefix, &resp.tokens, story.region_b_abs)?;
    let tokens = aligned.indices.iter().map(|&i| token_score(&resp, i)).collect::<Result<Vec<_>, _>>()?;
    Ok(RegionScore::new(&story.story_id, story.condition, Mode::Clm, &backend.descriptor().name, tokens, aligned.word_groups, end))
}

/// Scores each region-B token with that token masked and the whole story visible.
pub fn score_mlm(backend: &dyn ScoringBackend, story: &RealizedStory) -> Result<RegionScore, ScoringError> {
    check_mode(backend, Mode::Mlm)?;
    non_empty(story)?;
    let text = &story.full_text;
    let base = backend.score(&ScoreRequest { text: text.clone(), mode: Mode::Mlm, mask_index: None })?;
    let aligned = align_region(text, &base.tokens, story.region_b_abs)?;
    let mut tokens = Vec::with_capacity(aligned.indices.len());
    for &i in &aligned.indices {
        let resp = backend.score(&ScoreRequest { text: text.clone(), mode: Mode::Mlm, mask_index: Some(i) })?;
        let same = resp.tokens.len() == base.tokens.len()
            && resp.tokens.iter().zip(&base.tokens).all(|(a, b)| (a.start, a.end) == (b.start, b.end));
        if !same {
            return Err(ScoringError::AlignmentError(format!("masked query {i} changed the tokenization")));
        }
        tokens.push(token_score(&resp, i)?);
    }
    let context = text.chars().count();
    Ok(RegionScore::new(&story.story_id, story.condition, Mode::Mlm, &backend.descriptor().name, tokens, aligned.word_groups, context))
}

pub fn score_story(backend: &dyn ScoringBackend, story: &RealizedStory, mode: Mode) -> Result<RegionScore, ScoringError> {
    match mode {
        Mode::Clm => score_clm(backend, story),
        Mode::Mlm => score_mlm(backend, story),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateLimit {
    pub per_second: f64,
    pub burst: u32,
}

#[derive(Clone, Debug)]
pub struct ScoringOptions {
    /// Items scored concurrently.
    pub max_in_flight: usize,
    pub rate_limit: Option<RateLimit>,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions { max_in_flight: 4, rate_limit: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreFailure {
    pub story_id: String,
    pub condition: Condition,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct ScoreRun {
    /// In corpus order, then condition order.
    pub scores: Vec<RegionScore>,
    pub failures: Vec<ScoreFailure>,
    /// Requests that reached the backend (cache misses).
    pub backend_calls: usize,
}

struct Bucket {
    tokens: f64,
    last: Instant,
}

/// Counts calls reaching the real backend and applies the token bucket.
struct Metered<'a> {
    inner: &'a dyn ScoringBackend,
    calls: AtomicUsize,
    limit: Option<(RateLimit, Mutex<Bucket>)>,
}

impl Metered<'_> {
    fn acquire(&self) {
        let Some((limit, bucket)) = &self.limit else { return };
        loop {
            let wait = {
                let mut b = bucket.lock().expect("rate limiter lock");
                let now = Instant::now();
                let refill = now.duration_since(b.last).as_secs_f64() * limit.per_second;
                b.tokens = (b.tokens + refill).min(limit.burst.max(1) as f64);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                (1.0 - b.tokens) / limit.per_second
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

impl ScoringBackend for Metered<'_> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ScoringError> {
        self.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(req)
    }
}

/// Scores every story under each requested condition it supports.
///
/// Per-item failures are collected rather than aborting the batch. With a
/// cache directory, raw responses are stored content-addressed so reruns
/// issue no backend calls.
pub fn score_corpus(
    backend: &dyn ScoringBackend,
    corpus: &Corpus,
    conditions: &[Condition],
    mode: Mode,
    cache_dir: Option<&Path>,
    opts: &ScoringOptions,
) -> Result<ScoreRun, ScoringError> {
    check_mode(backend, mode)?;
    let metered = Metered {
        inner: backend,
        calls: AtomicUsize::new(0),
        limit: opts
            .rate_limit
            .filter(|l| l.per_second > 0.0)
            .map(|l| (l, Mutex::new(Bucket { tokens: l.burst.max(1) as f64, last: Instant::now() }))),
    };
    let cached = cache_dir.map(|d| CachingBackend::new(&metered, d));
    let effective: &dyn ScoringBackend = match &cached {
        Some(c) => c,
        None => &metered,
    };

    let mut conds: Vec<Condition> = conditions.to_vec();
    conds.sort();
    conds.dedup();
    let items: Vec<(&crate::corpus::StoryTemplate, Condition)> = corpus
        .stories
        .iter()
        .flat_map(|s| conds.iter().filter(|c| s.supports(**c)).map(move |c| (s, *c)))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RegionScore, ScoringError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = opts.max_in_flight.max(1).min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(template, condition)) = items.get(i) else { break };
                let r = realize(template, condition)
                    .map_err(ScoringError::from)
                    .and_then(|story| score_story(effective, &story, mode));
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut run = ScoreRun::default();
    for ((template, condition), r) in items.iter().zip(results.into_inner().expect("results lock")) {
        match r.expect("every item scored") {
            Ok(s) => run.scores.push(s),
            Err(e) => run.failures.push(ScoreFailure {
                story_id: template.story_id.clone(),
                condition: *condition,
                error: e.to_string(),
            }),
        }
    }
    run.backend_calls = metered.calls.load(Ordering::SeqCst);
    Ok(run)
}
