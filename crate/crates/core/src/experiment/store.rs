use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    create_session, ChunkEvent, ExperimentError, FamiliarityEvent, Question, RatingEvent, SessionPlan, RATING_MAX,
    RATING_MIN,
};
use crate::corpus::{realize, Corpus, RealizedStory};

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionCreated { plan: SessionPlan },
    ChunkAdvanced { event: ChunkEvent },
    Rating { event: RatingEvent },
    Familiarity { event: FamiliarityEvent },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingPrompt {
    pub question: Question,
    pub event_text: String,
    pub min: i64,
    pub max: i64,
    pub min_label: String,
    pub max_label: String,
}

/// What the participant should see next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NextItem {
    Chunk { trial_index: usize, chunk_index: usize, n_chunks: usize, text: String },
    /// All chunks of the trial were advanced; ratings still outstanding.
    TrialComplete { trial_index: usize, prompts: Vec<RatingPrompt> },
}

struct Session {
    plan: SessionPlan,
    stories: Vec<RealizedStory>,
    trial: usize,
    chunk: usize,
    ratings: BTreeSet<(usize, Question)>,
    familiarity: BTreeSet<usize>,
}

impl Session {
    fn n_trials(&self) -> usize {
        self.stories.len()
    }

    fn trial_read(&self, t: usize) -> bool {
        t < self.trial || (t == self.trial && self.chunk >= self.stories[t].chunks.len())
    }

    fn complete(&self) -> bool {
        self.trial >= self.n_trials()
    }

    /// Moves to the next trial once the current one is read and rated.
    fn settle(&mut self) {
        while !self.complete()
            && self.chunk >= self.stories[self.trial].chunks.len()
            && Question::ALL.iter().all(|q| self.ratings.contains(&(self.trial, *q)))
        {
            self.trial += 1;
            self.chunk = 0;
        }
    }
}

type Clock = Box<dyn Fn() -> i64 + Send + Sync>;

/// Session state rebuilt from, and persisted to, an append-only JSONL log.
pub struct Store {
    corpus: Arc<Corpus>,
    log_path: Option<PathBuf>,
    log: Option<File>,
    sessions: BTreeMap<String, Session>,
    events: Vec<Event>,
    clock: Clock,
}

fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

impl Store {
    pub fn in_memory(corpus: Arc<Corpus>) -> Self {
        Store { corpus, log_path: None, log: None, sessions: BTreeMap::new(), events: Vec::new(), clock: Box::new(now_ms) }
    }

    /// Opens (or creates) the log at `path` and replays it. A torn final line
    /// left by a crash is discarded.
    pub fn open(path: impl AsRef<Path>, corpus: Arc<Corpus>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let io = |source| ExperimentError::Io { path: path.display().to_string(), source };
        let raw = match std::fs::read_to_string(path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let mut store = Store::in_memory(corpus);
        let mut good_len = 0;
        for (i, line) in raw.split_inclusive('\n').enumerate() {
            if !line.ends_with('\n') {
                break;
            }
            if !line.trim().is_empty() {
                let ev: Event = serde_json::from_str(line).map_err(|e| ExperimentError::CorruptLog {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                store.apply(ev).map_err(|e| ExperimentError::CorruptLog {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            }
            good_len += line.len();
        }
        let mut file = OpenOptions::new().create(true).read(true).write(true).truncate(false).open(path).map_err(io)?;
        file.set_len(good_len as u64).map_err(io)?;
        file.seek(SeekFrom::End(0)).map_err(io)?;
        store.log = Some(file);
        store.log_path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn with_clock(mut self, clock: impl Fn() -> i64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn plans(&self) -> Vec<SessionPlan> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::SessionCreated { plan } => Some(plan.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn plan(&self, session_id: &str) -> Option<&SessionPlan> {
        self.sessions.get(session_id).map(|s| &s.plan)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Validates `ev` against current state and applies it in memory.
    fn apply(&mut self, ev: Event) -> Result<(), ExperimentError> {
        match &ev {
            Event::SessionCreated { plan } => {
                if self.sessions.contains_key(&plan.session_id) {
                    return Err(ExperimentError::SessionExists(plan.session_id.clone()));
                }
                let stories = plan
                    .trials
                    .iter()
                    .map(|t| {
                        let tmpl = self
                            .corpus
                            .story(&t.story_id)
                            .ok_or_else(|| crate::corpus::CorpusError::schema(&t.story_id, "story_id", "unknown story"))?;
                        Ok(realize(tmpl, t.condition)?)
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()?;
                self.sessions.insert(
                    plan.session_id.clone(),
                    Session { plan: plan.clone(), stories, trial: 0, chunk: 0, ratings: BTreeSet::new(), familiarity: BTreeSet::new() },
                );
            }
            Event::ChunkAdvanced { event } => {
                let s = self.session_mut(&event.session_id)?;
                if s.complete() || event.trial_index != s.trial || event.chunk_index != s.chunk || s.chunk >= s.stories[s.trial].chunks.len() {
                    return Err(ExperimentError::OutOfOrderChunk { expected: cursor_label(s), got: event.chunk_index });
                }
                if event.advanced_at <= event.shown_at {
                    return Err(ExperimentError::ClockSkew { shown_at: event.shown_at, advanced_at: event.advanced_at });
                }
                s.chunk += 1;
                s.settle();
            }
            Event::Rating { event } => {
                let s = self.session_mut(&event.session_id)?;
                check_trial(s, event.trial_index)?;
                if (event.value as i64) > RATING_MAX {
                    return Err(ExperimentError::ValueOutOfRange(event.value as i64));
                }
                if !s.ratings.insert((event.trial_index, event.question)) {
                    return Err(ExperimentError::DuplicateRating { trial_index: event.trial_index, question: event.question });
                }
                s.settle();
            }
            Event::Familiarity { event } => {
                let s = self.session_mut(&event.session_id)?;
                check_trial(s, event.trial_index)?;
                if !s.familiarity.insert(event.trial_index) {
                    return Err(ExperimentError::DuplicateFamiliarity(event.trial_index));
                }
            }
        }
        self.events.push(ev);
        Ok(())
    }

    fn session_mut(&mut self, id: &str) -> Result<&mut Session, ExperimentError> {
        self.sessions.get_mut(id).ok_or_else(|| ExperimentError::SessionNotFound(id.to_string()))
    }

    fn session(&self, id: &str) -> Result<&Session, ExperimentError> {
        self.sessions.get(id).ok_or_else(|| ExperimentError::SessionNotFound(id.to_string()))
    }

    /// Applies then appends `ev` as one line, flushed before returning.
    fn commit(&mut self, ev: Event) -> Result<(), ExperimentError> {
        let mut line = serde_json::to_string(&ev).expect("event serializes");
        line.push('\n');
        self.apply(ev)?;
        if let Some(f) = &mut self.log {
            let path = self.log_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            let io = |source| ExperimentError::Io { path: path.clone(), source };
            f.write_all(line.as_bytes()).map_err(io)?;
            f.sync_data().map_err(io)?;
        }
        Ok(())
    }

    pub fn create_session(&mut self, participant_id: &str, counterbalance_index: u64, seed: u64) -> Result<SessionPlan, ExperimentError> {
        let plan = create_session(participant_id, &self.corpus, counterbalance_index, seed, (self.clock)())?;
        self.commit(Event::SessionCreated { plan: plan.clone() })?;
        Ok(plan)
    }

    /// The current chunk (repeated until advanced) or the rating prompts.
    pub fn next_chunk(&self, session_id: &str) -> Result<NextItem, ExperimentError> {
        let s = self.session(session_id)?;
        if s.complete() {
            return Err(ExperimentError::SessionComplete(session_id.to_string()));
        }
        let story = &s.stories[s.trial];
        if s.chunk < story.chunks.len() {
            return Ok(NextItem::Chunk {
                trial_index: s.trial,
                chunk_index: s.chunk,
                n_chunks: story.chunks.len(),
                text: story.chunks[s.chunk].text.clone(),
            });
        }
        let tmpl = self.corpus.story(&story.story_id).expect("realized from corpus");
        let prompts = Question::ALL
            .iter()
            .filter(|q| !s.ratings.contains(&(s.trial, **q)))
            .map(|&q| RatingPrompt {
                question: q,
                event_text: match q {
                    Question::EventA => tmpl.event_a_text.clone(),
                    Question::EventB => tmpl.event_b_text.clone(),
                },
                min: RATING_MIN,
                max: RATING_MAX,
                min_label: "Not sure at all".into(),
                max_label: "Very sure".into(),
            })
            .collect();
        Ok(NextItem::TrialComplete { trial_index: s.trial, prompts })
    }

    pub fn record_advance(
        &mut self,
        session_id: &str,
        chunk_index: usize,
        shown_at: i64,
        advanced_at: i64,
    ) -> Result<ChunkEvent, ExperimentError> {
        let trial_index = {
            let s = self.session(session_id)?;
            if s.complete() {
                return Err(ExperimentError::SessionComplete(session_id.to_string()));
            }
            s.trial
        };
        let event = ChunkEvent {
            session_id: session_id.to_string(),
            trial_index,
            chunk_index,
            shown_at,
            advanced_at,
            rt_ms: advanced_at - shown_at,
            server_received_at: (self.clock)(),
        };
        self.commit(Event::ChunkAdvanced { event: event.clone() })?;
        Ok(event)
    }

    pub fn record_rating(
        &mut self,
        session_id: &str,
        trial_index: usize,
        question: Question,
        value: i64,
    ) -> Result<RatingEvent, ExperimentError> {
        if !(RATING_MIN..=RATING_MAX).contains(&value) {
            return Err(ExperimentError::ValueOutOfRange(value));
        }
        let event = RatingEvent {
            session_id: session_id.to_string(),
            trial_index,
            question,
            value: value as u8,
            server_received_at: (self.clock)(),
        };
        self.commit(Event::Rating { event: event.clone() })?;
        Ok(event)
    }

    pub fn record_familiarity(&mut self, session_id: &str, trial_index: usize, unfamiliar: bool) -> Result<FamiliarityEvent, ExperimentError> {
        let event = FamiliarityEvent {
            session_id: session_id.to_string(),
            trial_index,
            unfamiliar,
            server_received_at: (self.clock)(),
        };
        self.commit(Event::Familiarity { event: event.clone() })?;
        Ok(event)
    }

    pub fn chunk_events(&self) -> Vec<&ChunkEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::ChunkAdvanced { event } => Some(event),
                _ => None,
            })
            .collect()
    }

    pub fn rating_events(&self) -> Vec<&RatingEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Rating { event } => Some(event),
                _ => None,
            })
            .collect()
    }

    pub fn familiarity_events(&self) -> Vec<&FamiliarityEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Familiarity { event } => Some(event),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn realized(&self, session_id: &str, trial_index: usize) -> Option<&RealizedStory> {
        self.sessions.get(session_id).and_then(|s| s.stories.get(trial_index))
    }
}

fn cursor_label(s: &Session) -> String {
    if s.complete() {
        "none (session complete)".into()
    } else if s.chunk >= s.stories[s.trial].chunks.len() {
        format!("none (trial {} awaiting ratings)", s.trial)
    } else {
        format!("trial {} chunk {}", s.trial, s.chunk)
    }
}

fn check_trial(s: &Session, t: usize) -> Result<(), ExperimentError> {
    if t >= s.n_trials() {
        return Err(ExperimentError::TrialOutOfRange(t));
    }
    if !s.trial_read(t) {
        return Err(ExperimentError::TrialIncomplete(t));
    }
    Ok(())
}
