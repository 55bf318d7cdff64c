use std::net::SocketAddr;
use std::sync::Arc;

use causalread::corpus::{load_corpus, realize, Corpus, CorpusFormat};
use causalread::experiment::{read_chunk_csv, read_rating_csv, NextItem, Question, Store};
use causalread_server::{bind, serve, AppState, ErrorBody, SessionCreated};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::sync::oneshot;

const MINI: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mini_csk.json");

fn corpus() -> Corpus {
    let mini = load_corpus(MINI, CorpusFormat::CskJson).unwrap();
    let mut stories = mini.stories.clone();
    for (i, topic) in ["kitchen", "attic", "harbour"].iter().enumerate() {
        let mut s = mini.stories[i % 2].clone();
        s.story_id = format!("{topic}{i}");
        s.topic = topic.to_string();
        stories.push(s);
    }
    Corpus { stories, ..mini }
}

struct Server {
    base: String,
    state: AppState,
    stop: Option<oneshot::Sender<()>>,
    done: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(store: Store) -> Server {
        let listener = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let state = AppState::new(store, 17);
        let (tx, rx) = oneshot::channel();
        let app = state.clone();
        let done = tokio::spawn(async move {
            serve(listener, app, async {
                rx.await.ok();
            })
            .await
            .unwrap()
        });
        Server { base, state, stop: Some(tx), done }
    }

    async fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.done.await.unwrap();
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

async fn create(c: &Client, s: &Server, participant: &str) -> SessionCreated {
    let r = c.post(s.url("/sessions")).json(&json!({ "participant_id": participant })).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    r.json().await.unwrap()
}

async fn next(c: &Client, s: &Server, id: &str) -> (StatusCode, Value) {
    let r = c.get(s.url(&format!("/sessions/{id}/next"))).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

async fn post(c: &Client, s: &Server, id: &str, what: &str, body: Value) -> (StatusCode, Value) {
    let r = c.post(s.url(&format!("/sessions/{id}/{what}"))).json(&body).send().await.unwrap();
    (r.status(), r.json().await.unwrap())
}

/// Runs one participant through every trial, returning the chunk texts in the
/// order they were received.
async fn complete_session(c: &Client, s: &Server, id: &str, rt: i64) -> Vec<String> {
    let mut seen = Vec::new();
    let mut clock = 10_000;
    loop {
        let (status, body) = next(c, s, id).await;
        if status == StatusCode::GONE {
            assert_eq!(body["error"], "session_complete");
            return seen;
        }
        assert_eq!(status, StatusCode::OK, "{body}");
        match serde_json::from_value::<NextItem>(body).unwrap() {
            NextItem::Chunk { chunk_index, text, .. } => {
                seen.push(text);
                let (st, ev) = post(c, s, id, "advance", json!({"chunk_index": chunk_index, "shown_at": clock, "advanced_at": clock + rt})).await;
                assert_eq!(st, StatusCode::CREATED, "{ev}");
                assert_eq!(ev["rt_ms"], rt);
                clock += rt + 40;
            }
            NextItem::TrialComplete { trial_index, prompts } => {
                assert!(prompts.iter().all(|p| p.min == 0 && p.max == 7));
                assert_eq!((prompts[0].min_label.as_str(), prompts[0].max_label.as_str()), ("Not sure at all", "Very sure"));
                let (st, _) = post(c, s, id, "familiarity", json!({"trial_index": trial_index, "unfamiliar": false})).await;
                assert_eq!(st, StatusCode::CREATED);
                for p in prompts {
                    let (st, _) = post(c, s, id, "rating", json!({"trial_index": trial_index, "question": p.question, "value": 6})).await;
                    assert_eq!(st, StatusCode::CREATED);
                }
            }
        }
    }
}

#[tokio::test]
async fn scripted_session_appears_in_export() {
    let s = Server::start(Store::in_memory(Arc::new(corpus()))).await;
    let c = Client::new();
    let created = create(&c, &s, "alice").await;
    assert_eq!(created.n_trials, 3);
    let seen = complete_session(&c, &s, &created.session_id, 2500).await;

    let trials = c.get(s.url("/export/trials.csv")).send().await.unwrap();
    assert_eq!(trials.headers()["content-type"], "text/csv; charset=utf-8");
    let rows = read_chunk_csv(&trials.text().await.unwrap()).unwrap();
    assert_eq!(rows.len(), seen.len());
    assert!(rows.iter().all(|r| r.session_id == created.session_id && r.participant_id == "alice" && r.rt_ms == 2500));
    let ratings = read_rating_csv(&c.get(s.url("/export/ratings.csv")).send().await.unwrap().text().await.unwrap()).unwrap();
    assert_eq!(ratings.len(), 6);
    assert!(ratings.iter().all(|r| r.value == 6));
    let fam = c.get(s.url("/export/familiarity.csv")).send().await.unwrap().text().await.unwrap();
    assert_eq!(fam.lines().count(), 4);
    s.stop().await;
}

#[tokio::test]
async fn chunks_never_arrive_ahead_of_their_advance() {
    let s = Server::start(Store::in_memory(Arc::new(corpus()))).await;
    let c = Client::new();
    let id = create(&c, &s, "bob").await.session_id;
    let plan = s.state.store().read().await.plan(&id).unwrap().clone();
    let story = realize(s.state.store().read().await.corpus().story(&plan.trials[0].story_id).unwrap(), plan.trials[0].condition).unwrap();
    let n = story.chunks.len();
    for k in 0..n {
        for _ in 0..2 {
            let (_, body) = next(&c, &s, &id).await;
            assert_eq!(body["chunk_index"], k);
            let text = body.to_string();
            for later in &story.chunks[k + 1..] {
                if later.text != story.chunks[k].text {
                    assert!(!text.contains(&later.text), "chunk {} leaked while {k} is current", later.index);
                }
            }
        }
        let (st, _) = post(&c, &s, &id, "advance", json!({"chunk_index": k, "shown_at": 0, "advanced_at": 300})).await;
        assert_eq!(st, StatusCode::CREATED);
    }
    let (_, body) = next(&c, &s, &id).await;
    assert_eq!(body["type"], "trial_complete");
    s.stop().await;
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let s = Server::start(Store::in_memory(Arc::new(corpus()))).await;
    let c = Client::new();
    let id = create(&c, &s, "carol").await.session_id;
    let kind = |v: &Value| serde_json::from_value::<ErrorBody>(v.clone()).unwrap().error;

    let (st, body) = next(&c, &s, "missing").await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::NOT_FOUND, "session_not_found"));
    let (st, body) = post(&c, &s, &id, "advance", json!({"chunk_index": 1, "shown_at": 0, "advanced_at": 5})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::CONFLICT, "out_of_order_chunk"));
    let (st, body) = post(&c, &s, &id, "advance", json!({"chunk_index": 0, "shown_at": 5, "advanced_at": 5})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "clock_skew"));
    let (st, body) = post(&c, &s, &id, "rating", json!({"trial_index": 0, "question": "EventA", "value": 3})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::CONFLICT, "trial_incomplete"));
    let (st, body) = post(&c, &s, &id, "rating", json!({"trial_index": 0, "question": "EventA", "value": 8})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "value_out_of_range"));
    let (st, body) = post(&c, &s, &id, "familiarity", json!({"trial_index": 9, "unfamiliar": true})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "trial_out_of_range"));

    complete_session(&c, &s, &id, 700).await;
    let (st, body) = post(&c, &s, &id, "rating", json!({"trial_index": 0, "question": "EventB", "value": 1})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::CONFLICT, "duplicate_rating"));
    let (st, body) = post(&c, &s, &id, "advance", json!({"chunk_index": 0, "shown_at": 0, "advanced_at": 5})).await;
    assert_eq!((st, kind(&body).as_str()), (StatusCode::GONE, "session_complete"));

    let bad = c.post(s.url(&format!("/sessions/{id}/rating"))).json(&json!({"trial_index": 0, "question": "EventC", "value": 1})).send().await.unwrap();
    assert!(bad.status().is_client_error());
    s.stop().await;
}

#[tokio::test]
async fn concurrent_sessions_are_all_recorded() {
    let s = Arc::new(Server::start(Store::in_memory(Arc::new(corpus()))).await);
    let mut handles = Vec::new();
    for i in 0..8 {
        let s = s.clone();
        handles.push(tokio::spawn(async move {
            let c = Client::new();
            let id = create(&c, &s, &format!("p{i}")).await.session_id;
            complete_session(&c, &s, &id, 300 + i).await;
            id
        }));
    }
    let mut ids = Vec::new();
    for h in handles {
        ids.push(h.await.unwrap());
    }
    let c = Client::new();
    let rows = read_chunk_csv(&c.get(s.url("/export/trials.csv")).send().await.unwrap().text().await.unwrap()).unwrap();
    for id in &ids {
        let mine: Vec<_> = rows.iter().filter(|r| &r.session_id == id).collect();
        assert!(!mine.is_empty());
        for w in mine.windows(2) {
            let (a, b) = (w[0], w[1]);
            assert!((b.trial_index, b.chunk_index) > (a.trial_index, a.chunk_index), "events out of order");
        }
    }
    // Counterbalance indices 0..8 are handed out in arrival order, so each condition
    // sits at each trial position twice or three times.
    let ratings = read_rating_csv(&c.get(s.url("/export/ratings.csv")).send().await.unwrap().text().await.unwrap()).unwrap();
    assert_eq!(ratings.iter().filter(|r| r.question == Question::EventA).count(), 24);
    let store = s.state.store();
    let plans = store.read().await.plans();
    for j in 0..3 {
        for cond in causalread::corpus::Condition::ALL {
            let k = plans.iter().filter(|p| p.trials[j].condition == cond).count();
            assert!((2..=3).contains(&k), "position {j} {cond:?}: {k}");
        }
    }
    Arc::try_unwrap(s).ok().unwrap().stop().await;
}

#[tokio::test]
async fn log_replays_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let c = Client::new();
    let s = Server::start(Store::open(&path, Arc::new(corpus())).unwrap()).await;
    let id = create(&c, &s, "dora").await.session_id;
    complete_session(&c, &s, &id, 1200).await;
    let before = c.get(s.url("/export/trials.csv")).send().await.unwrap().text().await.unwrap();
    s.stop().await;
    let raw = std::fs::read_to_string(&path).unwrap();
    assert!(raw.ends_with('\n'));

    let s = Server::start(Store::open(&path, Arc::new(corpus())).unwrap()).await;
    let after = c.get(s.url("/export/trials.csv")).send().await.unwrap().text().await.unwrap();
    assert_eq!(before, after);
    let (st, _) = next(&c, &s, &id).await;
    assert_eq!(st, StatusCode::GONE);
    s.stop().await;
}
