//! Trial tables, mixed-effects and ordinal models, and data preparation.

pub mod design;
pub mod linalg;
pub mod lmm;
pub mod optim;
pub mod ordinal;
pub mod prepare;
pub mod simulate;
pub mod table;

use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::corpus::Condition;
pub use design::{FixedTerm, Grouping, ModelSpec, RandomTerm, ResponseTransform};
pub use lmm::{
    contrast, fit_lmm, fit_with_simplification, simplification_ladder, Contrast, FitOptions,
    FixedEffectEstimate, MixedModelFit, TraceStep, VarianceComponent,
};
pub use ordinal::{fit_clm_ordinal, OrdinalFit, OrdinalOptions};
pub use table::{ResponseKind, TrialRow, TrialTable};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("invalid trial table: {0}")]
    InvalidTable(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("condition {0} is not present in the data")]
    MissingCondition(Condition),
    #[error("optimizer did not converge for {formula} after {evaluations} evaluations")]
    NonConvergence { formula: String, evaluations: usize },
    #[error("fixed-effects design is rank deficient")]
    RankDeficient,
    #[error("random term for {} has {groups} level(s); at least 2 needed", grouping.label())]
    TooFewGroups { grouping: Grouping, groups: usize },
    #[error("log transform of non-positive response {0}")]
    NonPositiveResponse(f64),
    #[error("complete or quasi-complete separation on {0}")]
    Separation(String),
    #[error("ordinal response has {0} observed categor(ies); at least 2 needed")]
    TooFewCategories(usize),
    #[error("scores from different backends cannot be mixed: {0}")]
    MixedBackends(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How p-values are derived from t (or z) statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    /// Two-sided standard normal tail.
    #[default]
    Normal,
}

impl PMethod {
    pub fn two_sided(self, t: f64) -> f64 {
        match self {
            PMethod::Normal => erfc(t.abs() / std::f64::consts::SQRT_2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PMethod::Normal => "normal",
        }
    }
}

impl std::str::FromStr for PMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" | "wald" => Ok(PMethod::Normal),
            other => Err(format!("unknown p-value method {other:?} (available: normal)")),
        }
    }
}
