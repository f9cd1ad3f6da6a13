//! Downstream tasks over trained or rigged generators: range projection and
//! the projected power method, compressed sensing by latent descent,
//! sample-complexity sweeps, range-expansion probes, Lipschitz estimates, and
//! weight-divergence metrics between the outer and intermediate layers.

mod csgm;
mod divergence;
mod generator;
mod probe;
mod project;

pub use csgm::{
    csgm_recover, sample_complexity_sweep, write_sweep_csv, CsgmConfig, CsgmResult, LineSearch,
    MeasurementModel, SweepConfig, SweepRow, SweepTable,
};
pub use divergence::{compare_flat, weight_divergence, FlatComparison, WeightDivergence};
pub use generator::{clamp_to_ball, Generator, LinearRig, NetGenerator, DEFAULT_RADIUS};
pub use probe::{
    lipschitz_estimate, range_expansion_probe, write_coverage_csv, CoverageReport,
    LipschitzEstimate,
};
pub use project::{ppower, project_to_range, PPowerConfig, PPowerResult, ProjectConfig, Projection};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("zero vector: {0}")]
    ZeroVector(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Provenance written at the top of every report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
}

impl ReportMeta {
    fn header_line(&self) -> String {
        format!("# seed={},config_hash={}", self.seed, self.config_hash)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<(), DownstreamError> {
    if expected != got {
        return Err(DownstreamError::DimensionMismatch { expected, got });
    }
    Ok(())
}
