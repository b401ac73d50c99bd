//! Exact solutions of the continuum equation for two, three and four
//! experts. The formulas hold on the ordered sector `x₁ ≥ x₂ ≥ … ≥ xₙ`; the
//! solution is permutation invariant, so every query is sorted first.

use core::f64::consts::SQRT_2;

use libm::{atan, atanh, cosh, exp, sinh};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClosedFormError {
    #[error("closed forms exist for 2, 3 or 4 experts, not {0}")]
    Experts(usize),
    #[error("expected {expected} coordinates, got {got}")]
    Length { expected: usize, got: usize },
}

/// Below this the `arctanh(e^z)` factor is treated as its limit `0`.
const SINGULAR_GUARD: f64 = -1e-12;

/// `u(x)` for `n = x.len() ∈ {2, 3, 4}` experts.
pub fn exact_solution(n: usize, x: &[f64]) -> Result<f64, ClosedFormError> {
    if !(2..=4).contains(&n) {
        return Err(ClosedFormError::Experts(n));
    }
    if x.len() != n {
        return Err(ClosedFormError::Length { expected: n, got: x.len() });
    }
    let mut s = [0.0; 4];
    s[..n].copy_from_slice(x);
    s[..n].sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(match n {
        2 => two_experts(s[0], s[1]),
        3 => three_experts(s[0], s[1], s[2]),
        _ => four_experts(s[0], s[1], s[2], s[3]),
    })
}

/// `w(x) = u(x, 0)` for `x` of length `n - 1`.
pub fn exact_reduced(n: usize, x: &[f64]) -> Result<f64, ClosedFormError> {
    if !(2..=4).contains(&n) {
        return Err(ClosedFormError::Experts(n));
    }
    if x.len() + 1 != n {
        return Err(ClosedFormError::Length { expected: n - 1, got: x.len() });
    }
    let mut full = [0.0; 4];
    full[..n - 1].copy_from_slice(x);
    exact_solution(n, &full[..n])
}

fn two_experts(x1: f64, x2: f64) -> f64 {
    x1 + exp(SQRT_2 * (x2 - x1)) / (2.0 * SQRT_2)
}

fn three_experts(x1: f64, x2: f64, x3: f64) -> f64 {
    two_experts(x1, x2) + exp(SQRT_2 * (2.0 * x3 - x2 - x1)) / (6.0 * SQRT_2)
}

fn four_experts(x1: f64, x2: f64, x3: f64, x4: f64) -> f64 {
    let z = (x4 + x3 - x2 - x1) / SQRT_2;
    let a = (x4 - x3 + x2 - x1) / SQRT_2;
    let b = (-x4 + x3 + x2 - x1) / SQRT_2;
    let c = (-x4 - x3 + x2 + x1) / SQRT_2;
    let half = SQRT_2 / 2.0;
    let mut u = x1 - SQRT_2 / 4.0 * sinh(SQRT_2 * (x1 - x2));
    u += half * atan(exp(z)) * cosh(a) * cosh(b) * cosh(c);
    // z = 0 on the sector forces x₁ = … = x₄, where the sinh product vanishes.
    if z <= SINGULAR_GUARD {
        u += half * atanh(exp(z)) * sinh(a) * sinh(b) * sinh(c);
    }
    u
}
