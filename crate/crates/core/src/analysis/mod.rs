//! Reports built on converged fields: strategy optimality, player
//! strategies, convergence and localization studies, and property audits.
//!
//! Every report restricts itself to a *region*: nodes whose real
//! coordinates all have magnitude at most `region_bound`. On the sector grid
//! that is the unit box `[0, 1]^d` by default.

use thiserror::Error;

use crate::closed_form::ClosedFormError;
use crate::operator::FieldError;
use crate::solver::SolveError;

pub mod audit;
pub mod strategy;
pub mod study;

pub use audit::{property_report, AuditReport, Check};
pub use strategy::{
    canonical_strategy, comb_strategy, optimality_report, player_strategy, StrategyId, StrategyReport, StrategyRow,
};
pub use study::{
    convergence_study, fit_slope, localization_study, ConvergenceRow, ConvergenceStudy, LocalizationRow, Reference,
};

/// Default analysis region: nodes with every coordinate in `[0, 1]`.
pub const DEFAULT_REGION: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("the zero direction is not a strategy")]
    ZeroStrategy,
    #[error("strategy id {id} is not a canonical nonzero strategy for {n} experts")]
    StrategyId { id: u32, n: usize },
    #[error("no interior node lies in the region |x| <= {bound}")]
    EmptyRegion { bound: f64 },
    #[error("region bound {bound} exceeds T - h = {limit}")]
    Region { bound: f64, limit: f64 },
    #[error("a convergence study needs at least {need} resolutions, got {got}")]
    Resolutions { need: usize, got: usize },
    #[error("resolutions disagree on the number of experts")]
    MixedExperts,
    #[error("spacing {coarse} is not an integer multiple of the reference spacing {fine}")]
    SpacingRatio { coarse: f64, fine: f64 },
    #[error("perturbation must be positive and finite, got {0}")]
    Perturbation(f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
}

/// Largest lattice index inside the region, tolerating round-off in
/// `bound / h`.
pub(crate) fn region_limit(bound: f64, h: f64) -> i32 {
    let r = bound / h;
    libm::floor(r + 1e-9 * r.max(1.0)) as i32
}

#[inline]
pub(crate) fn in_region(index: &[i32], limit: i32) -> bool {
    index.iter().all(|i| i.abs() <= limit)
}

/// Rejects regions that reach the Dirichlet layer.
pub(crate) fn check_region(bound: f64, half_width: f64, h: f64) -> Result<i32, AnalysisError> {
    let max = half_width - h;
    if !(bound >= 0.0 && bound <= max + 1e-9 * half_width) {
        return Err(AnalysisError::Region { bound, limit: max });
    }
    Ok(region_limit(bound, h))
}
