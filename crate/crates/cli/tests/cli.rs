mod common;

use std::io::{BufRead, BufReader};
use std::process::Stdio;
use std::sync::Arc;

use causalread::corpus::{load_corpus, CorpusFormat, CorpusSource};
use causalread::experiment::{NextItem, Question, Store};
use causalread::report::read_contrast_csv;
use causalread::scoring::read_summary_csv;
use causalread::stats::TrialTable;
use common::*;
use serde_json::{json, Value};

fn read(p: &std::path::Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn meta(p: &std::path::Path) -> Value {
    serde_json::from_str(&read(&causalread_cli::meta::meta_path(p))).unwrap()
}

#[test]
fn score_writes_one_row_per_story_and_condition() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_widened(dir.path(), 21);
    let out = dir.path().join("all");
    run_ok(&["score", "--corpus", s(&corpus), "--backend", "ref", "--mode", "clm", "--out", s(&out)]);
    let rows = read_summary_csv(read(&out.join("scores_ref_clm.csv")).as_bytes()).unwrap();
    assert_eq!(rows.len(), 63);

    let two = dir.path().join("two");
    run_ok(&["score", "--corpus", s(&corpus), "--backend", "ref", "--conditions", "A->B,notA->B", "--out", s(&two)]);
    assert_eq!(read_summary_csv(read(&two.join("scores_ref_clm.csv")).as_bytes()).unwrap().len(), 42);

    let m = meta(&out.join("scores_ref_clm.csv"));
    assert_eq!(m["tool_version"], causalread::TOOL_VERSION);
    assert_eq!(m["seed"], 0);
    assert_eq!(m["log_base"], "e");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_ne!(m["config_hash"], meta(&two.join("scores_ref_clm.csv"))["config_hash"]);
}

#[test]
fn unknown_backend_is_a_usage_error() {
    let o = run(&["score", "--corpus", MINI, "--backend", "gpt-9", "--out", "/nonexistent/out"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gpt-9") && err.contains("ref, ref-left"), "{err}");

    let o = run(&["score", "--corpus", "/no/such/corpus.json", "--backend", "ref"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["score", "--corpus", MINI, "--backend", "ref", "--mode", "xlm"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn warm_cache_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = dir.path().join("out");
            let err = bin()
                .args(["score", "--corpus", MINI, "--backend", "ref", "--mode", "mlm", "--cache", s(&cache), "--out", s(&out)])
                .output()
                .unwrap();
            assert!(err.status.success());
            let f = out.join("scores_ref_mlm.csv");
            (tag, read(&f), read(&out.join("tokens_ref_mlm.csv")), meta(&f), String::from_utf8(err.stderr).unwrap())
        })
        .collect();
    assert_eq!(runs[0].1, runs[1].1);
    assert_eq!(runs[0].2, runs[1].2);
    assert_eq!(runs[0].3["config_hash"], runs[1].3["config_hash"]);
    assert!(runs[1].4.contains(" 0 backend calls"), "{}", runs[1].4);
}

#[test]
fn analyze_reference_scores_gives_one_rq1_row() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, seed) = write_directional(dir.path(), "plain", |_| false);
    let out = dir.path().join("scores");
    run_ok(&["score", "--corpus", s(&corpus), "--backend", "ref", "--ref-seed", s(&seed), "--out", s(&out)]);
    let an = dir.path().join("an");
    let text = run_ok(&["analyze", "--scores", s(&out.join("scores_ref_clm.csv")), "--contrast", "rq1", "--out", s(&an)]);
    let rows = read_contrast_csv(read(&an.join("contrasts.csv")).as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].model.as_str(), rows[0].contrast.as_str(), rows[0].dataset.as_str()), ("ref (CLM)", "A vs notA", "CSK"));
    assert!(text.contains("| CSK | ref (CLM) |"), "{text}");
    for f in ["contrasts.csv", "contrasts.md", "fits.json", "means_ref_CLM.csv"] {
        assert!(causalread_cli::meta::meta_path(&an.join(f)).exists(), "{f}");
    }
}

#[test]
fn aggregate_flag_switches_the_response_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("story_id,condition,mode,backend,n_tokens,n_words,mean_per_word_surprisal,mean_per_token_surprisal,total_nll\n");
    for i in 0..6 {
        for (c, shift) in [("A->B", 0.0), ("notA->B", 0.4)] {
            let w = 5.0 + i as f64 * 0.3 + shift;
            csv.push_str(&format!("s{i},{c},clm,toy,8,4,{w},{},{}\n", w / 2.0, w * 4.0));
        }
    }
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, csv).unwrap();
    let means = |agg: &str| {
        let out = dir.path().join(agg);
        run_ok(&["analyze", "--scores", s(&scores), "--aggregate", agg, "--contrast", "rq1", "--out", s(&out)]);
        read(&out.join("means_toy_CLM.csv"))
    };
    let (word, token) = (means("per_word"), means("per_token"));
    assert_ne!(word, token);
    let first_mean = |t: &str| t.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert!((first_mean(&word) - 2.0 * first_mean(&token)).abs() < 1e-12);
}

/// Drives `n` participants through the store with a 60 ms/char slower region B after notA.
fn human_export(corpus: &causalread::corpus::Corpus, n: u64) -> (String, String) {
    let mut store = Store::in_memory(Arc::new(corpus.clone()));
    let mut noise = 7u64;
    for p in 0..n {
        let plan = store.create_session(&format!("p{p}"), p, 100 + p).unwrap();
        let mut clock = 1_000;
        while let Ok(item) = store.next_chunk(&plan.session_id) {
            match item {
                NextItem::Chunk { trial_index, chunk_index, text, .. } => {
                    noise = noise.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let jitter = (noise >> 33) % 400;
                    let slow = if plan.trials[trial_index].condition == causalread::corpus::Condition::NegatedAB { 300 } else { 0 };
                    let rt = 20 * text.chars().count() as i64 + jitter as i64 + slow;
                    store.record_advance(&plan.session_id, chunk_index, clock, clock + rt).unwrap();
                    clock += rt + 50;
                }
                NextItem::TrialComplete { trial_index, .. } => {
                    store.record_familiarity(&plan.session_id, trial_index, false).unwrap();
                    for (k, q) in Question::ALL.into_iter().enumerate() {
                        let v = ((p as usize + trial_index + k) % 8) as i64;
                        store.record_rating(&plan.session_id, trial_index, q, v).unwrap();
                    }
                }
            }
        }
    }
    store.export_trials().unwrap()
}

#[test]
fn human_export_gives_all_three_contrasts_labelled_human() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = write_widened(dir.path(), 6);
    let corpus = load_corpus(&corpus_path, CorpusFormat::CskJson).unwrap();
    let (chunks, ratings) = human_export(&corpus, 24);
    let (tp, rp) = (dir.path().join("trials.csv"), dir.path().join("ratings.csv"));
    std::fs::write(&tp, chunks).unwrap();
    std::fs::write(&rp, ratings).unwrap();
    let out = dir.path().join("an");
    run_ok(&["analyze", "--trials", s(&tp), "--corpus", s(&corpus_path), "--ratings", s(&rp), "--out", s(&out)]);
    let rows = read_contrast_csv(read(&out.join("contrasts.csv")).as_bytes()).unwrap();
    let human: Vec<_> = rows.iter().filter(|r| r.model == "Human").map(|r| r.contrast.as_str()).collect();
    assert_eq!(human, ["A vs notA", "nil vs notA", "nil vs A"]);
    assert!(rows.iter().all(|r| r.failure.is_none()), "{rows:?}");
    let rq1 = rows.iter().find(|r| r.model == "Human" && r.contrast == "A vs notA").unwrap();
    assert!(rq1.b.unwrap() > 0.0);
    assert_eq!(rows.iter().filter(|r| r.model.starts_with("Human rating")).count(), 6);
    let excl: Value = serde_json::from_str(&read(&out.join("exclusions.json"))).unwrap();
    assert_eq!(excl["raw_trials"], 72);
    assert_eq!(excl["rt_excluded"], 0);
}

#[test]
fn simulate_is_deterministic_and_writes_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["simulate", "--seed", "7", "--effect", "0.2", "--out", s(out)]);
    }
    assert_eq!(read(&a.join("sim_7.csv")), read(&b.join("sim_7.csv")));
    let truth: Value = serde_json::from_str(&read(&a.join("sim_7.truth.json"))).unwrap();
    assert_eq!(truth["condition_effects"], json!([0.2]));
    assert_eq!(truth["seed"], 7);
    assert_eq!(meta(&a.join("sim_7.csv"))["seed"], 7);
    let t = TrialTable::read_csv(read(&a.join("sim_7.csv")).as_bytes()).unwrap();
    assert_eq!(t.len(), 20 * 80);
}

#[test]
fn zero_variance_simulation_fits_theta_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    run_ok(&["simulate", "--seed", "3", "--item-sd", "0", "--out", s(&out)]);
    let an = dir.path().join("an");
    run_ok(&["analyze", "--table", s(&out.join("sim_3.csv")), "--random", "item", "--contrast", "rq1", "--out", s(&an)]);
    let fits: Value = serde_json::from_str(&read(&an.join("fits.json"))).unwrap();
    let theta = fits[0]["result"]["fit"]["theta"][0].as_f64().unwrap();
    assert!(theta < 0.05, "theta {theta}");
}

#[test]
fn transforms_write_derived_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let (once, twice) = (dir.path().join("short.json"), dir.path().join("short2.json"));
    run_ok(&["transform", "shorten", "--in", MINI, "--out", s(&once)]);
    run_ok(&["transform", "shorten", "--in", s(&once), "--out", s(&twice)]);
    assert_eq!(read(&once), read(&twice));
    let c = load_corpus(&once, CorpusFormat::CskJson).unwrap();
    assert_eq!(c.source, CorpusSource::Derived);

    let trip = dir.path().join("trip.jsonl");
    let pair = json!({
        "pair_id": 12,
        "plausible": ["Ann took out a glass.", "Ann poured some milk.", "Ann drank the milk."],
        "implausible": ["Ann took out a glass.", "Ann spilled all the milk.", "Ann drank the milk."],
        "breakpoint": 2,
        "split": "test"
    });
    std::fs::write(&trip, format!("{pair}\n")).unwrap();
    let converted = dir.path().join("trip.json");
    run_ok(&["transform", "trip", "--in", s(&trip), "--out", s(&converted)]);
    let c = load_corpus(&converted, CorpusFormat::CskJson).unwrap();
    assert_eq!(c.stories.len(), 1);
    assert_eq!(c.stories[0].story_id, "12");
}

#[test]
fn report_merges_contrast_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&a, "dataset,model,contrast,b,t,p,sign_code,failure\nCSK,Human,A vs notA,0.21,4.77,0.0000018,***,\n").unwrap();
    std::fs::write(&b, "dataset,model,contrast,b,t,p,sign_code,failure\nCSK,ref (CLM),A vs notA,,,,n.s.,singular\n").unwrap();
    let out = dir.path().join("rep");
    let text = run_ok(&["report", "--contrasts", s(&a), "--contrasts", s(&b), "--out", s(&out)]);
    assert!(text.contains("| CSK | Human | 0.21 & 4.77 & *** |"), "{text}");
    assert!(text.contains("fit failed: singular"), "{text}");
    assert!(out.join("table.md").exists() && out.join("table.csv.meta.json").exists());
    assert_eq!(run(&["report"]).status.code(), Some(2));
}

fn spawn_server(corpus: &std::path::Path, log: &std::path::Path, addr: &str) -> (std::process::Child, String) {
    let mut child = bin()
        .args(["serve", "--corpus", s(corpus), "--log", s(log), "--addr", addr])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.as_mut().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected: {line}")).to_string();
    (child, base)
}

#[test]
fn serve_records_a_scripted_session_and_stops_on_sigint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_widened(dir.path(), 3);
    let log = dir.path().join("events.jsonl");
    let (mut child, base) = spawn_server(&corpus, &log, "127.0.0.1:0");
    let c = reqwest::blocking::Client::new();
    let created: Value = c.post(format!("{base}/sessions")).json(&json!({"participant_id": "erin"})).send().unwrap().json().unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    loop {
        let r = c.get(format!("{base}/sessions/{id}/next")).send().unwrap();
        if r.status() == reqwest::StatusCode::GONE {
            break;
        }
        let body: Value = r.json().unwrap();
        if body["type"] == "trial_complete" {
            let t = &body["trial_index"];
            for q in ["EventA", "EventB"] {
                let r = c.post(format!("{base}/sessions/{id}/rating")).json(&json!({"trial_index": t, "question": q, "value": 5})).send().unwrap();
                assert_eq!(r.status(), reqwest::StatusCode::CREATED);
            }
        } else {
            let body = json!({"chunk_index": body["chunk_index"], "shown_at": 0, "advanced_at": 800});
            let r = c.post(format!("{base}/sessions/{id}/advance")).json(&body).send().unwrap();
            assert_eq!(r.status(), reqwest::StatusCode::CREATED);
        }
    }
    let export = c.get(format!("{base}/export/trials.csv")).send().unwrap().text().unwrap();
    assert!(export.lines().skip(1).all(|l| l.contains(&id)) && export.lines().count() > 3);

    let port = base.rsplit(':').next().unwrap().to_string();
    let clash = run(&["serve", "--corpus", s(&corpus), "--log", s(&dir.path().join("other.jsonl")), "--addr", &format!("127.0.0.1:{port}")]);
    assert_eq!(clash.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&clash.stderr).contains("cannot bind"));

    std::process::Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    let status = child.wait().unwrap();
    assert!(status.success(), "{status:?}");
    let raw = read(&log);
    assert!(raw.ends_with('\n'));
    for line in raw.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}
