use std::path::PathBuf;

use causalread::corpus::Condition;
use causalread::stats::simulate::{simulate, SimulationConfig};
use causalread::stats::{ResponseKind, ResponseTransform};
use clap::Args;
use serde::Serialize;

use crate::analyze::TransformArg;
use crate::meta::Writer;
use crate::{CliError, CliResult};

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 80)]
    pub subjects: usize,
    /// The first condition is the reference.
    #[arg(long, value_delimiter = ',', default_value = "A->B,notA->B")]
    pub conditions: Vec<Condition>,
    /// One effect per non-reference condition, on the linear-predictor scale.
    #[arg(long = "effect", value_delimiter = ',', default_value = "0.21", allow_negative_numbers = true)]
    pub effects: Vec<f64>,
    #[arg(long, default_value_t = 50f64.ln(), allow_negative_numbers = true)]
    pub intercept: f64,
    #[arg(long, default_value_t = 0.1)]
    pub item_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    pub subject_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    pub slope_sd: f64,
    #[arg(long, default_value_t = 0.3)]
    pub residual_sd: f64,
    /// `log` exponentiates the linear predictor (reading-time-like responses).
    #[arg(long, value_enum, default_value = "log")]
    pub transform: TransformArg,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn config(&self) -> SimulationConfig {
        let (response_transform, response_kind) = match self.transform {
            TransformArg::Log => (ResponseTransform::Log, ResponseKind::RtMsPerChar),
            TransformArg::Identity => (ResponseTransform::Identity, ResponseKind::SurprisalNats),
        };
        SimulationConfig {
            seed: self.seed,
            n_items: self.items,
            n_subjects: self.subjects,
            conditions: self.conditions.clone(),
            intercept: self.intercept,
            condition_effects: self.effects.clone(),
            item_sd: self.item_sd,
            subject_sd: self.subject_sd,
            item_slope_sd: self.slope_sd,
            residual_sd: self.residual_sd,
            response_transform,
            response_kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub table: PathBuf,
    pub truth: PathBuf,
}

/// Writes `sim_<seed>.csv` and the generating parameters as `sim_<seed>.truth.json`.
pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<SimulateOutput> {
    let cfg = args.config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let table = simulate(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let writer = Writer::new("simulate", args, args.seed);
    let table_path = writer.write(&args.out.join(format!("sim_{}.csv", args.seed)), table.to_csv_string().as_bytes())?;
    let mut truth = serde_json::to_string_pretty(&cfg).expect("config serializes");
    truth.push('\n');
    let truth_path = writer.write(&args.out.join(format!("sim_{}.truth.json", args.seed)), truth.as_bytes())?;
    Ok(SimulateOutput { table: table_path, truth: truth_path })
}
