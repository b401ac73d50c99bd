//! Structural checks a converged field must pass: small residual, `w ≥ g`,
//! the Lipschitz bound inherited from `g`, and discrete convexity near the
//! origin.

use alloc::vec::Vec;

use crate::analysis::{check_region, in_region, AnalysisError};
use crate::exec::{Executor, NODE_CHUNK};
use crate::lattice::Lattice;
use crate::operator::{payoff, residual_of, second_difference, Field, MaxPayoff};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst case observed.
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checks: Vec<Check>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const RESIDUAL: &str = "residual";
pub const LOWER_BOUND: &str = "lower_bound";
pub const LIPSCHITZ: &str = "lipschitz";
pub const CONVEXITY: &str = "convexity";

#[derive(Debug, Clone, Copy)]
struct Worst {
    gap: f64,
    slope: f64,
    hessian: f64,
}

impl Worst {
    const START: Self = Self { gap: f64::INFINITY, slope: 0.0, hessian: f64::INFINITY };

    fn merge(self, o: Self) -> Self {
        Self { gap: self.gap.min(o.gap), slope: self.slope.max(o.slope), hessian: self.hessian.min(o.hessian) }
    }
}

/// Audits `field` against the thresholds implied by `tolerance`:
///
/// | check | passes when |
/// |---|---|
/// | residual | `≤ tol` |
/// | lower bound | `min (w - g) ≥ -tol` |
/// | Lipschitz | every neighbor difference `≤ h + 2 tol` |
/// | convexity | every second difference in the region `≥ -4 tol / h²` |
pub fn property_report<L: Lattice>(
    field: &Field<L>,
    tolerance: f64,
    region_bound: f64,
    exec: &impl Executor,
) -> Result<AuditReport, AnalysisError> {
    let lattice = field.lattice();
    let h = lattice.spacing();
    let h2 = h * h;
    let limit = check_region(region_bound, lattice.config().half_width(), h)?;
    let values = field.values();
    let worst = exec
        .map_ranges(lattice.len(), NODE_CHUNK, |range| {
            let mut acc = Worst::START;
            lattice.visit(range, |node| {
                let w = values[node.rank];
                acc.gap = acc.gap.min(w - payoff(node.coords));
                let Some(stencil) = node.stencil else { return };
                let local = in_region(node.index, limit);
                for &e in stencil {
                    let corr = if e.correction() { h } else { 0.0 };
                    let up = (values[e.plus()] - w).abs();
                    let down = (values[e.minus()] - corr - w).abs();
                    acc.slope = acc.slope.max(up).max(down);
                    if local {
                        acc.hessian = acc.hessian.min(second_difference(values, w, e, h) / h2);
                    }
                }
            });
            acc
        })
        .into_iter()
        .fold(Worst::START, Worst::merge);
    let residual = residual_of(lattice, values, &MaxPayoff, exec);
    let checks = alloc::vec![
        Check { name: RESIDUAL, passed: residual <= tolerance, value: residual, threshold: tolerance },
        Check { name: LOWER_BOUND, passed: worst.gap >= -tolerance, value: worst.gap, threshold: -tolerance },
        Check { name: LIPSCHITZ, passed: worst.slope <= h + 2.0 * tolerance, value: worst.slope, threshold: h + 2.0 * tolerance },
        Check {
            name: CONVEXITY,
            passed: worst.hessian >= -4.0 * tolerance / h2,
            value: worst.hessian,
            threshold: -4.0 * tolerance / h2,
        },
    ];
    Ok(AuditReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::lattice::{SectorLattice, StencilMode};
    use crate::sector::GridConfig;
    use crate::solver::{solve_sector, SolveOptions};

    #[test]
    fn converged_three_expert_field_passes() {
        let h = 0.1;
        let s = solve_sector(GridConfig::covering(3, h, 5.0).unwrap(), &SolveOptions::for_spacing(h), StencilMode::OnTheFly, &Serial)
            .unwrap();
        let report = property_report(&s.field, s.tolerance, 1.0, &Serial).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn payoff_field_fails_only_the_residual() {
        let config = GridConfig::covering(3, 0.1, 3.0).unwrap();
        let lattice = SectorLattice::new(config, StencilMode::OnTheFly, &Serial).unwrap();
        let f = Field::sample(lattice, &MaxPayoff);
        let report = property_report(&f, 1e-4, 1.0, &Serial).unwrap();
        let lower = report.get(LOWER_BOUND).unwrap();
        assert!(lower.passed && lower.value == 0.0);
        assert!(!report.get(RESIDUAL).unwrap().passed);
        assert!(!report.passed());
    }

    #[test]
    fn lowered_value_breaks_the_lower_bound() {
        let config = GridConfig::covering(2, 0.1, 3.0).unwrap();
        let lattice = SectorLattice::new(config, StencilMode::OnTheFly, &Serial).unwrap();
        let (lattice, mut v) = Field::sample(lattice, &MaxPayoff).into_parts();
        v[5] -= 0.01;
        let f = Field::new(lattice, v).unwrap();
        let report = property_report(&f, 1e-4, 1.0, &Serial).unwrap();
        assert!(!report.get(LOWER_BOUND).unwrap().passed);
    }
}
