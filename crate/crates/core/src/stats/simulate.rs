//! Synthetic crossed subject × item data with known parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::design::ResponseTransform;
use super::table::{ResponseKind, TrialRow, TrialTable};
use super::StatsError;
use crate::corpus::Condition;

/// Generating parameters; serialized verbatim as the truth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_items: usize,
    pub n_subjects: usize,
    /// Conditions rotated over items by a Latin square; the first is the reference.
    pub conditions: Vec<Condition>,
    pub intercept: f64,
    /// Effect of each non-reference condition, in `conditions` order after the first.
    pub condition_effects: Vec<f64>,
    pub item_sd: f64,
    pub subject_sd: f64,
    /// By-item sd of the condition effects.
    pub item_slope_sd: f64,
    pub residual_sd: f64,
    /// `Log` exponentiates the linear predictor, giving positive responses.
    pub response_transform: ResponseTransform,
    pub response_kind: ResponseKind,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 0,
            n_items: 20,
            n_subjects: 80,
            conditions: vec![Condition::AffirmedAB, Condition::NegatedAB],
            intercept: 50f64.ln(),
            condition_effects: vec![0.21],
            item_sd: 0.1,
            subject_sd: 0.0,
            item_slope_sd: 0.0,
            residual_sd: 0.3,
            response_transform: ResponseTransform::Log,
            response_kind: ResponseKind::RtMsPerChar,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        let bad = |m: &str| Err(StatsError::InvalidSpec(m.to_string()));
        if self.conditions.is_empty() || self.condition_effects.len() + 1 != self.conditions.len() {
            return bad("need one effect per non-reference condition");
        }
        if self.n_items == 0 || self.n_subjects == 0 {
            return bad("need at least one item and one subject");
        }
        if [self.item_sd, self.subject_sd, self.item_slope_sd, self.residual_sd].iter().any(|s| !(*s >= 0.0)) {
            return bad("standard deviations must be non-negative");
        }
        if self.response_transform == ResponseTransform::Identity && self.response_kind == ResponseKind::RtMsPerChar {
            return bad("identity responses cannot be reading times");
        }
        Ok(())
    }

    pub fn item_id(i: usize) -> String {
        format!("item{:03}", i + 1)
    }

    pub fn subject_id(s: usize) -> String {
        format!("subj{:03}", s + 1)
    }
}

/// Draws one table: every subject sees every item once, with condition
/// `conditions[(item + subject) mod C]`.
pub fn simulate(cfg: &SimulationConfig) -> Result<TrialTable, StatsError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nc = cfg.conditions.len();
    let items: Vec<(f64, Vec<f64>)> = (0..cfg.n_items)
        .map(|_| {
            let b0 = cfg.item_sd * std_normal.sample(&mut rng);
            let slopes = (1..nc).map(|_| cfg.item_slope_sd * std_normal.sample(&mut rng)).collect();
            (b0, slopes)
        })
        .collect();
    let subjects: Vec<f64> = (0..cfg.n_subjects).map(|_| cfg.subject_sd * std_normal.sample(&mut rng)).collect();
    let mut rows = Vec::with_capacity(cfg.n_items * cfg.n_subjects);
    for (s, &sb) in subjects.iter().enumerate() {
        for (i, (ib, slopes)) in items.iter().enumerate() {
            let ci = (i + s) % nc;
            let effect = if ci == 0 { 0.0 } else { cfg.condition_effects[ci - 1] + slopes[ci - 1] };
            let eta = cfg.intercept + effect + sb + ib + cfg.residual_sd * std_normal.sample(&mut rng);
            let response = match cfg.response_transform {
                ResponseTransform::Log => eta.exp(),
                ResponseTransform::Identity => eta,
            };
            let response = if cfg.response_kind == ResponseKind::Likert0to7 { response.round().clamp(0.0, 7.0) } else { response };
            rows.push(TrialRow::new(
                Some(&SimulationConfig::subject_id(s)),
                &SimulationConfig::item_id(i),
                cfg.conditions[ci],
                response,
            ));
        }
    }
    TrialTable::new(cfg.response_kind, rows)
}
