use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use causalread::corpus::{load_corpus, Condition};
use causalread::experiment::{read_chunk_csv, read_rating_csv, Question};
use causalread::report::{emit_condition_means, render_contrast_table, ContrastRow};
use causalread::scoring::{read_summary_csv, Aggregate, RegionSummary};
use causalread::stats::design::condition_dummy_name;
use causalread::stats::prepare::{prepare_rating_table_from_export, prepare_rt_table_from_export, prepare_surprisal_table, ExclusionReport};
use causalread::stats::{
    contrast, fit_clm_ordinal, FixedTerm, ModelSpec, OrdinalOptions, PMethod, ResponseKind, ResponseTransform, TrialTable,
};
use causalread::FitOptions64;
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::meta::Writer;
use crate::{read_text, require_exists, runtime, slug, CliError, CliResult, FormatArg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomArg {
    /// Maximal structure with simplification when subjects are present, else by-item intercepts.
    Auto,
    Maximal,
    Item,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformArg {
    Log,
    Identity,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AnalyzeArgs {
    /// Region summary CSV from `score`. Repeatable.
    #[arg(long = "scores")]
    pub scores: Vec<PathBuf>,
    /// Chunk-event export of the reading experiment; needs `--corpus`.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Ratings export; each question is fitted with a cumulative-logit model.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csk")]
    pub format: FormatArg,
    /// Generic trial-table CSV (as written by `simulate`). Repeatable.
    #[arg(long = "table")]
    pub tables: Vec<PathBuf>,
    #[arg(long, default_value = "per_word")]
    pub aggregate: Aggregate,
    /// `rq1`, `rq2`, `all`, or `REF:CMP` (e.g. `A:notA`). Comma separated or repeated.
    #[arg(long = "contrast", value_delimiter = ',', default_value = "all")]
    pub contrasts: Vec<String>,
    #[arg(long, default_value = "normal")]
    pub p_method: PMethod,
    #[arg(long, default_value = "CSK")]
    pub dataset: String,
    #[arg(long, value_enum, default_value = "auto")]
    pub random: RandomArg,
    #[arg(long, value_enum, default_value = "log")]
    pub transform: TransformArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Do not print the table or exclusion summary.
    #[arg(long)]
    #[serde(skip)]
    pub quiet: bool,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ContrastSpec {
    pub reference: Condition,
    pub comparison: Condition,
}

impl ContrastSpec {
    pub const RQ1: ContrastSpec = ContrastSpec { reference: Condition::AffirmedAB, comparison: Condition::NegatedAB };
    pub const RQ2: [ContrastSpec; 2] = [
        ContrastSpec { reference: Condition::OmittedNilB, comparison: Condition::NegatedAB },
        ContrastSpec { reference: Condition::OmittedNilB, comparison: Condition::AffirmedAB },
    ];

    /// `A vs notA`, `nil vs notA`, `nil vs A`.
    pub fn label(&self) -> String {
        format!("{} vs {}", self.reference.short(), self.comparison.short())
    }
}

pub fn parse_contrasts(items: &[String]) -> CliResult<Vec<ContrastSpec>> {
    let mut out: Vec<ContrastSpec> = Vec::new();
    for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let add: Vec<ContrastSpec> = match item {
            "rq1" => vec![ContrastSpec::RQ1],
            "rq2" => ContrastSpec::RQ2.to_vec(),
            "all" => [vec![ContrastSpec::RQ1], ContrastSpec::RQ2.to_vec()].concat(),
            other => {
                let (r, c) = other
                    .split_once(':')
                    .ok_or_else(|| CliError::Usage(format!("contrast {other:?}: expected rq1, rq2, all or REF:CMP")))?;
                let parse = |s: &str| s.parse::<Condition>().map_err(|e| CliError::Usage(e.to_string()));
                let spec = ContrastSpec { reference: parse(r)?, comparison: parse(c)? };
                if spec.reference == spec.comparison {
                    return Err(CliError::Usage(format!("contrast {other:?} compares a condition with itself")));
                }
                vec![spec]
            }
        };
        for s in add {
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no contrasts requested".into()));
    }
    Ok(out)
}

/// One analysed response: a backend's surprisal, human reading times, or a rating question.
struct Model {
    label: String,
    table: TrialTable,
}

#[derive(Serialize)]
struct FitRecord<'a> {
    dataset: &'a str,
    model: &'a str,
    contrast: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutput {
    pub rows: Vec<ContrastRow>,
    pub table_text: String,
    pub exclusions: Option<ExclusionReport>,
}

fn score_models(path: &Path, aggregate: Aggregate) -> CliResult<Vec<Model>> {
    let rows = read_summary_csv(read_text(path)?.as_bytes()).map_err(runtime)?;
    let mut groups: BTreeMap<(String, String), Vec<RegionSummary>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.backend.clone(), r.mode.label().to_string())).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(CliError::Analysis(format!("{} has no score rows", path.display())));
    }
    groups
        .into_iter()
        .map(|((backend, mode), rows)| {
            let table = prepare_surprisal_table(&rows, aggregate).map_err(|e| CliError::Analysis(e.to_string()))?;
            Ok(Model { label: format!("{backend} ({mode})"), table })
        })
        .collect()
}

fn model_spec(args: &AnalyzeArgs, table: &TrialTable, reference: Condition) -> (ModelSpec, bool) {
    let transform = match args.transform {
        TransformArg::Log => ResponseTransform::Log,
        TransformArg::Identity => ResponseTransform::Identity,
    };
    let has_subjects = table.rows().iter().any(|r| r.subject_id.is_some());
    let (spec, simplify) = match args.random {
        RandomArg::Maximal => (ModelSpec::maximal(reference), true),
        RandomArg::Auto if has_subjects => (ModelSpec::maximal(reference), true),
        RandomArg::Auto | RandomArg::Item => (ModelSpec::by_item_intercepts(reference), false),
    };
    (spec.with_transform(transform), simplify)
}

fn fit_one(args: &AnalyzeArgs, m: &Model, c: ContrastSpec) -> Result<(ContrastRow, Value), String> {
    let label = c.label();
    if m.table.response_kind() == ResponseKind::Likert0to7 {
        let sub = m.table.subset(&[c.reference, c.comparison]);
        let opts = OrdinalOptions { p_method: args.p_method, ..OrdinalOptions::default() };
        let fit = fit_clm_ordinal::<f64>(&sub, &[FixedTerm::Condition { reference: c.reference }], &opts).map_err(|e| e.to_string())?;
        let coef = fit.coefficient(&condition_dummy_name(c.comparison)).ok_or("comparison coefficient missing")?;
        let row = ContrastRow::fitted(&args.dataset, &m.label, &label, coef.b, coef.z, coef.p).map_err(|e| e.to_string())?;
        let mut v = serde_json::to_value(&fit).expect("fit serializes");
        v["report"] = json!(coef.report());
        return Ok((row, v));
    }
    let (spec, simplify) = model_spec(args, &m.table, c.reference);
    let opts = FitOptions64 { p_method: args.p_method, ..FitOptions64::default() };
    let fit = contrast::<f64>(&m.table, c.reference, c.comparison, &spec, simplify, &opts).map_err(|e| e.to_string())?;
    let e = &fit.estimate;
    let row = ContrastRow::fitted(&args.dataset, &m.label, &label, e.b, e.t, e.p).map_err(|e| e.to_string())?;
    Ok((row, serde_json::to_value(&fit).expect("fit serializes")))
}

/// Fits every requested contrast for every input, writing `contrasts.csv`,
/// `contrasts.md`, `fits.json` and per-model condition means. Contrasts whose
/// conditions are absent from an input are skipped; failed fits are reported
/// in the table and make the command fail with an analysis error.
pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<AnalyzeOutput> {
    if args.scores.is_empty() && args.trials.is_none() && args.ratings.is_none() && args.tables.is_empty() {
        return Err(CliError::Usage("nothing to analyze: pass --scores, --trials, --ratings or --table".into()));
    }
    for p in args.scores.iter().chain(&args.tables).chain(&args.trials).chain(&args.ratings).chain(&args.corpus) {
        require_exists(p, "input")?;
    }
    let contrasts = parse_contrasts(&args.contrasts)?;

    let mut models = Vec::new();
    for p in &args.scores {
        models.extend(score_models(p, args.aggregate)?);
    }
    let mut exclusions = None;
    if let Some(p) = &args.trials {
        let corpus_path = args.corpus.as_ref().ok_or_else(|| CliError::Usage("--trials needs --corpus".into()))?;
        let corpus = load_corpus(corpus_path, args.format.into()).map_err(runtime)?;
        let rows = read_chunk_csv(&read_text(p)?).map_err(runtime)?;
        let (table, report) = prepare_rt_table_from_export(&rows, &corpus).map_err(|e| CliError::Analysis(e.to_string()))?;
        if !args.quiet {
            eprintln!("{}", report.summary());
        }
        exclusions = Some(report);
        models.push(Model { label: "Human".into(), table });
    }
    if let Some(p) = &args.ratings {
        let rows = read_rating_csv(&read_text(p)?).map_err(runtime)?;
        for q in Question::ALL {
            let table = prepare_rating_table_from_export(&rows, q).map_err(|e| CliError::Analysis(e.to_string()))?;
            if !table.is_empty() {
                models.push(Model { label: format!("Human rating ({q:?})"), table });
            }
        }
    }
    for p in &args.tables {
        let table = TrialTable::read_csv(read_text(p)?.as_bytes()).map_err(|e| CliError::Analysis(e.to_string()))?;
        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "table".into());
        models.push(Model { label, table });
    }

    let writer = Writer::new("analyze", args, args.seed);
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut failed = 0;
    for m in &models {
        let present = m.table.conditions();
        for &c in &contrasts {
            if !(present.contains(&c.reference) && present.contains(&c.comparison)) {
                if !args.quiet {
                    eprintln!("{}: skipping {} (condition not in data)", m.label, c.label());
                }
                continue;
            }
            let mut rec = FitRecord { dataset: &args.dataset, model: &m.label, contrast: c.label(), result: None, error: None };
            match fit_one(args, m, c) {
                Ok((row, v)) => {
                    rows.push(row);
                    rec.result = Some(v);
                }
                Err(e) => {
                    failed += 1;
                    rows.push(ContrastRow::failed(&args.dataset, &m.label, &c.label(), &e));
                    rec.error = Some(e);
                }
            }
            records.push(rec);
        }
        let conds: Vec<Condition> = Condition::ALL.into_iter().filter(|c| present.contains(c)).collect();
        let mut buf = Vec::new();
        emit_condition_means(&m.table, &conds, false, &mut buf).map_err(|e| CliError::Analysis(e.to_string()))?;
        writer.write(&args.out.join(format!("means_{}.csv", slug(&m.label))), &buf)?;
    }
    if rows.is_empty() {
        return Err(CliError::Analysis("no requested contrast is estimable from the inputs".into()));
    }

    let rendered = render_contrast_table(&rows).map_err(|e| CliError::Analysis(e.to_string()))?;
    writer.write(&args.out.join("contrasts.csv"), rendered.csv.as_bytes())?;
    writer.write(&args.out.join("contrasts.md"), rendered.text.as_bytes())?;
    let mut fits = serde_json::to_string_pretty(&records).expect("fits serialize");
    fits.push('\n');
    writer.write(&args.out.join("fits.json"), fits.as_bytes())?;
    if let Some(r) = &exclusions {
        let mut body = serde_json::to_string_pretty(r).expect("report serializes");
        body.push('\n');
        writer.write(&args.out.join("exclusions.json"), body.as_bytes())?;
    }
    if !args.quiet {
        print!("{}", rendered.text);
    }

    if failed > 0 {
        return Err(CliError::Analysis(format!("{failed} contrast fit(s) failed; see fits.json")));
    }
    Ok(AnalyzeOutput { rows, table_text: rendered.text, exclusions })
}
