//! Causal-coherence reading experiments: story corpora, language-model
//! surprisal, mixed-effects and ordinal analyses, self-paced reading sessions,
//! and result tables.

pub mod corpus;
pub mod experiment;
pub mod report;
pub mod scalar;
pub mod scoring;
pub mod stats;
pub mod text;

pub use scalar::Scalar;

/// Mixed-model fit in double precision.
pub type LmmFit = stats::MixedModelFit<f64>;
/// Mixed-model fit in single precision.
pub type LmmFit32 = stats::MixedModelFit<f32>;
pub type FitOptions64 = stats::FitOptions<f64>;
pub type OrdinalFit64 = stats::OrdinalFit<f64>;
pub type OrdinalFit32 = stats::OrdinalFit<f32>;
pub type Matrix64 = stats::linalg::Matrix<f64>;

/// Version string embedded in output metadata.
pub const TOOL_VERSION: &str = concat!("causalread ", env!("CARGO_PKG_VERSION"));
