//! Convergence and localization experiments.

use alloc::vec::Vec;
use core::ops::ControlFlow;

use crate::analysis::{check_region, in_region, AnalysisError};
use crate::closed_form::exact_reduced;
use crate::exec::Executor;
use crate::lattice::{Lattice, SectorLattice, StencilMode};
use crate::operator::{Field, MaxPayoff};
use crate::sector::GridConfig;
use crate::solver::{solve, solve_sector, SolveOptions, Solved};

/// What the errors of a convergence study are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// The closed form (two to four experts).
    Exact,
    /// The finest grid of the study, which gets no row of its own.
    FinestGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub m: u32,
    pub sup_error: f64,
    /// Slope against the previous (coarser) row, if any.
    pub local_slope: Option<f64>,
    pub iterations: u64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub n_experts: usize,
    pub region_bound: f64,
    pub reference: Reference,
    /// Ordered by decreasing `h`.
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log h` over all rows.
    pub fitted_slope: f64,
}

/// Least-squares slope through `(log h, log error)`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(h, e) in points {
        sx += libm::log(h);
        sy += libm::log(e);
    }
    let (mx, my) = (sx / k, sy / k);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(h, e) in points {
        let dx = libm::log(h) - mx;
        sxy += dx * (libm::log(e) - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn sup_over_region<L: Lattice>(field: &Field<L>, limit: i32, mut err: impl FnMut(&[i32], &[f64], f64) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let values = field.values();
    field.lattice().visit(0..values.len(), |node| {
        if in_region(node.index, limit) {
            worst = worst.max(err(node.index, node.coords, values[node.rank]));
        }
    });
    worst
}

/// Solves at each resolution and measures the sup error on the region.
///
/// With two to four experts the error is taken against the closed form;
/// otherwise against the finest resolution, whose spacing must divide all
/// the others. `progress` is called after every solve.
pub fn convergence_study(
    resolutions: &[GridConfig],
    region_bound: f64,
    mode: StencilMode,
    exec: &impl Executor,
    progress: &mut dyn FnMut(&GridConfig, &Solved<SectorLattice>),
) -> Result<ConvergenceStudy, AnalysisError> {
    let mut configs = resolutions.to_vec();
    configs.sort_by(|a, b| b.spacing().total_cmp(&a.spacing()));
    let n = match configs.first() {
        Some(c) => c.n_experts(),
        None => return Err(AnalysisError::Resolutions { need: 2, got: 0 }),
    };
    if configs.iter().any(|c| c.n_experts() != n) {
        return Err(AnalysisError::MixedExperts);
    }
    let reference = if n <= 4 { Reference::Exact } else { Reference::FinestGrid };
    let need = if reference == Reference::Exact { 2 } else { 3 };
    if configs.len() < need {
        return Err(AnalysisError::Resolutions { need, got: configs.len() });
    }
    let limits = configs
        .iter()
        .map(|c| check_region(region_bound, c.half_width(), c.spacing()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut solve_one = |config: &GridConfig| -> Result<Solved<SectorLattice>, AnalysisError> {
        let solved = solve_sector(*config, &SolveOptions::for_spacing(config.spacing()), mode, exec)?;
        progress(config, &solved);
        Ok(solved)
    };

    let mut rows = Vec::with_capacity(configs.len());
    match reference {
        Reference::Exact => {
            for (config, &limit) in configs.iter().zip(&limits) {
                let solved = solve_one(config)?;
                let mut failure = None;
                let err = sup_over_region(&solved.field, limit, |_, x, w| match exact_reduced(n, x) {
                    Ok(u) => (w - u).abs(),
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                });
                if let Some(e) = failure {
                    return Err(e.into());
                }
                rows.push(row(config, err, &solved));
            }
        }
        Reference::FinestGrid => {
            let finest = configs.last().expect("at least three resolutions");
            let fine_h = finest.spacing();
            let ratios = configs[..configs.len() - 1]
                .iter()
                .map(|c| {
                    let r = c.spacing() / fine_h;
                    let k = libm::round(r);
                    if k >= 1.0 && (r - k).abs() <= 1e-9 * r {
                        Ok(k as i32)
                    } else {
                        Err(AnalysisError::SpacingRatio { coarse: c.spacing(), fine: fine_h })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let fine = solve_one(finest)?;
            for ((config, &limit), &k) in configs.iter().zip(&limits).zip(&ratios) {
                let solved = solve_one(config)?;
                let mut scaled = [0i32; crate::MAX_DIM];
                let d = config.dim();
                let err = sup_over_region(&solved.field, limit, |idx, _, w| {
                    for (s, &i) in scaled[..d].iter_mut().zip(idx) {
                        *s = i * k;
                    }
                    let u = fine.field.value_at(&scaled[..d]).expect("coarse nodes lie on the fine grid");
                    (w - u).abs()
                });
                rows.push(row(config, err, &solved));
            }
        }
    }
    for k in 1..rows.len() {
        let slope = fit_slope(&[(rows[k - 1].h, rows[k - 1].sup_error), (rows[k].h, rows[k].sup_error)]);
        rows[k].local_slope = Some(slope);
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.sup_error)).collect();
    Ok(ConvergenceStudy { n_experts: n, region_bound, reference, rows, fitted_slope: fit_slope(&points) })
}

fn row(config: &GridConfig, sup_error: f64, solved: &Solved<SectorLattice>) -> ConvergenceRow {
    ConvergenceRow {
        h: config.spacing(),
        m: config.m(),
        sup_error,
        local_slope: None,
        iterations: solved.iterations,
        residual: solved.residual,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRow {
    pub half_width: f64,
    pub m: u32,
    /// `sup |w_δ - w|` over the region, where `w_δ` has Dirichlet data
    /// `g + δ`.
    pub sup_difference: f64,
}

/// Measures how much a Dirichlet perturbation `delta` leaks into the region
/// for each box half-width (rounded up to a multiple of `h`).
pub fn localization_study(
    n_experts: usize,
    h: f64,
    half_widths: &[f64],
    delta: f64,
    region_bound: f64,
    mode: StencilMode,
    exec: &impl Executor,
) -> Result<Vec<LocalizationRow>, AnalysisError> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(AnalysisError::Perturbation(delta));
    }
    let mut rows = Vec::with_capacity(half_widths.len());
    for &t in half_widths {
        let config = GridConfig::covering(n_experts, h, t).map_err(crate::solver::SolveError::from)?;
        let limit = check_region(region_bound, config.half_width(), h)?;
        let options = SolveOptions::for_spacing(h);
        let base = solve_sector(config, &options, mode, exec)?;
        let lattice = SectorLattice::from_grid(base.field.lattice().grid().clone(), mode, exec)
            .map_err(crate::solver::SolveError::from)?;
        let (lattice, mut initial) = Field::sample(lattice, &MaxPayoff).into_parts();
        for (rank, v) in initial.iter_mut().enumerate() {
            if !lattice.is_interior(rank) {
                *v += delta;
            }
        }
        let shifted = solve(lattice, &MaxPayoff, initial, &options, exec, &mut |_| ControlFlow::Continue(()))?;
        let b = base.field.values();
        let sup_difference = sup_over_region(&shifted.field, limit, |idx, _, w| {
            let r = base.field.lattice().rank_of(idx).expect("same grid");
            (w - b[r]).abs()
        });
        rows.push(LocalizationRow { half_width: config.half_width(), m: config.m(), sup_difference });
    }
    Ok(rows)
}
