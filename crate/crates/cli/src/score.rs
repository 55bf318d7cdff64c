use std::collections::BTreeMap;
use std::path::PathBuf;

use causalread::corpus::{load_corpus, Condition, Corpus};
use causalread::scoring::{
    score_corpus, write_summary_csv, write_token_csv, BackendDescriptor, MlmContext, Mode, RateLimit, ReferenceBackend,
    RemoteBackend, ScoreFailure, ScoringBackend, ScoringOptions,
};
use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use crate::meta::Writer;
use crate::{read_text, require_exists, runtime, slug, CliError, CliResult, FormatArg};

pub const BUILTIN_BACKENDS: [&str; 2] = ["ref", "ref-left"];

#[derive(Args, Debug, Clone, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "csk")]
    pub format: FormatArg,
    /// `ref`, `ref-left`, or a backend descriptor JSON file. Repeatable.
    #[arg(long = "backend", required = true)]
    pub backends: Vec<String>,
    #[arg(long, default_value = "clm")]
    pub mode: Mode,
    #[arg(long, value_delimiter = ',', default_value = "A->B,notA->B,nil->B")]
    pub conditions: Vec<Condition>,
    /// Response cache directory; reruns against a warm cache make no backend calls.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    /// Requests per second, overriding the descriptor's limit.
    #[arg(long)]
    pub rate_limit: Option<f64>,
    /// Training text for the reference backend, one document per line.
    /// Defaults to the shared chunks of the corpus.
    #[arg(long)]
    pub ref_seed: Option<PathBuf>,
    /// Environment variable holding the bearer token for remote backends.
    #[arg(long)]
    pub token_env: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ScoreOutput {
    pub summaries: Vec<PathBuf>,
    pub failures: Vec<ScoreFailure>,
}

fn reference_seed(args: &ScoreArgs, corpus: &Corpus) -> CliResult<Vec<String>> {
    let docs: Vec<String> = match &args.ref_seed {
        Some(p) => read_text(p)?.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect(),
        None => corpus
            .stories
            .iter()
            .map(|s| s.shared_chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" "))
            .collect(),
    };
    if docs.iter().all(|d| d.trim().is_empty()) {
        return Err(CliError::Usage("reference backend seed text is empty".into()));
    }
    Ok(docs)
}

fn resolve_backend(name: &str, args: &ScoreArgs, corpus: &Corpus) -> CliResult<Box<dyn ScoringBackend>> {
    match name {
        "ref" => return Ok(Box::new(ReferenceBackend::named("ref", &reference_seed(args, corpus)?))),
        "ref-left" => {
            let b = ReferenceBackend::named("ref-left", &reference_seed(args, corpus)?).with_mlm_context(MlmContext::LeftOnly);
            return Ok(Box::new(b));
        }
        _ => {}
    }
    let path = PathBuf::from(name);
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "unknown backend {name:?}; available: {}, or a backend descriptor JSON file",
            BUILTIN_BACKENDS.join(", ")
        )));
    }
    let desc: BackendDescriptor =
        serde_json::from_str(&read_text(&path)?).map_err(|e| CliError::Usage(format!("backend descriptor {name}: {e}")))?;
    desc.validate().map_err(CliError::Usage)?;
    let mut endpoint = desc
        .endpoint
        .clone()
        .ok_or_else(|| CliError::Usage(format!("backend descriptor {name} has no endpoint")))?;
    if let Some(var) = &args.token_env {
        endpoint.auth_token_env = Some(var.clone());
    }
    if let Some(r) = args.rate_limit {
        endpoint.rate_limit = Some(r);
    }
    Ok(Box::new(RemoteBackend::new(&desc.name, endpoint).map_err(runtime)?))
}

/// Scores the corpus with each backend, writing `scores_<backend>_<mode>.csv`
/// and `tokens_<backend>_<mode>.csv`. Item failures are written too and turn
/// into a runtime error once every backend has run.
pub fn cmd_score(args: &ScoreArgs) -> CliResult<ScoreOutput> {
    require_exists(&args.corpus, "corpus")?;
    if let Some(p) = &args.ref_seed {
        require_exists(p, "reference seed")?;
    }
    let corpus = load_corpus(&args.corpus, args.format.into()).map_err(runtime)?;
    let backends = args.backends.iter().map(|b| resolve_backend(b, args, &corpus)).collect::<CliResult<Vec<_>>>()?;
    let writer = Writer::new("score", args, args.seed);
    let mut out = ScoreOutput { summaries: vec![], failures: vec![] };

    for backend in &backends {
        let desc = backend.descriptor().clone();
        if !desc.supports(args.mode) {
            return Err(CliError::Usage(format!("backend {} does not support {} scoring", desc.name, args.mode)));
        }
        let rate_limit = args
            .rate_limit
            .or(desc.endpoint.as_ref().and_then(|e| e.rate_limit))
            .map(|per_second| RateLimit { per_second, burst: 1 });
        let opts = ScoringOptions { max_in_flight: args.jobs.max(1), rate_limit };
        let run = score_corpus(backend.as_ref(), &corpus, &args.conditions, args.mode, args.cache.as_deref(), &opts)
            .map_err(runtime)?;

        let stem = format!("{}_{}", slug(&desc.name), args.mode.label().to_lowercase());
        let extra: BTreeMap<String, Value> = [
            ("backend".to_string(), json!(desc.name)),
            ("fingerprint".to_string(), json!(desc.fingerprint)),
            ("mode".to_string(), json!(args.mode)),
            ("log_base".to_string(), json!("e")),
            (
                "context".to_string(),
                json!(match args.mode {
                    Mode::Clm => "story text preceding each token",
                    Mode::Mlm => "full story with one token masked",
                }),
            ),
        ]
        .into_iter()
        .collect();

        let summaries: Vec<_> = run.scores.iter().map(|s| s.summary()).collect();
        let mut buf = Vec::new();
        write_summary_csv(&summaries, &mut buf).map_err(runtime)?;
        out.summaries.push(writer.write_with(&args.out.join(format!("scores_{stem}.csv")), &buf, &extra)?);
        let mut buf = Vec::new();
        write_token_csv(&run.scores, &mut buf).map_err(runtime)?;
        writer.write_with(&args.out.join(format!("tokens_{stem}.csv")), &buf, &extra)?;
        if !run.failures.is_empty() {
            let body = serde_json::to_vec_pretty(&run.failures).expect("failures serialize");
            writer.write_with(&args.out.join(format!("failures_{stem}.json")), &body, &extra)?;
        }
        eprintln!(
            "{} ({}): {} regions scored, {} failed, {} backend calls",
            desc.name,
            args.mode,
            run.scores.len(),
            run.failures.len(),
            run.backend_calls
        );
        out.failures.extend(run.failures);
    }

    if out.failures.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Runtime(format!("{} item(s) failed to score; see failures_*.json", out.failures.len())))
    }
}
