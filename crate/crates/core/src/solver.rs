//! Relaxed Jacobi iteration
//!
//! ```text
//! w_{k+1} = (1 - dt) w_k + dt (F(∇²_h w_k) + g)
//! ```
//!
//! run until `sup |w - F(∇²_h w) - g| ≤ tolerance` on the interior. With
//! `dt ≤ h² / (1 + h²)` the update is nondecreasing in every value it reads,
//! so each sweep is a `(1 - dt)`-contraction in the sup norm. Sweeps read
//! only the previous iterate and write a second buffer, so any partition of
//! the nodes gives the same bits.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use thiserror::Error;

use crate::exec::{Executor, NODE_CHUNK};
use crate::lattice::{FullGrid, Lattice, SectorLattice, StencilMode};
use crate::operator::{operator_at, Field, FieldError, MaxPayoff, Source};
use crate::sector::{GridConfig, GridError};

/// Hard cap on the derived iteration limit.
pub const ITERATION_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("relaxation step {dt} must lie in (0, 1]")]
    Step { dt: f64 },
    #[error("relaxation step {dt} exceeds the monotone limit {limit}; pass allow_non_monotone to force it")]
    NonMonotone { dt: f64, limit: f64 },
    #[error("residual tolerance must be positive and finite, got {0}")]
    Tolerance(f64),
    #[error("residual check interval must be at least 1")]
    CheckInterval,
    #[error("no convergence after {iterations} iterations; last residual {residual:e}")]
    MaxIterations { iterations: u64, residual: f64 },
    #[error("non-finite value produced at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error("stopped by observer at iteration {iteration}")]
    Interrupted { iteration: u64 },
    #[error("full-grid solves support d <= {max}, got d = {d}")]
    FullGridDimension { d: usize, max: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub dt: f64,
    pub residual_tolerance: f64,
    /// Derived from the contraction rate when `None`.
    pub max_iterations: Option<u64>,
    pub residual_check_interval: u64,
    /// Calls the observer every this many iterations.
    pub checkpoint_interval: Option<u64>,
    pub allow_non_monotone: bool,
}

impl SolveOptions {
    /// Defaults for spacing `h`: monotone step, tolerance `h²/100`, residual
    /// checked every 100 sweeps.
    pub fn for_spacing(h: f64) -> Self {
        Self {
            dt: monotone_step(h),
            residual_tolerance: h * h / 100.0,
            max_iterations: None,
            residual_check_interval: 100,
            checkpoint_interval: None,
            allow_non_monotone: false,
        }
    }

    pub fn validate(&self, h: f64) -> Result<(), SolveError> {
        let dt = self.dt;
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(SolveError::Step { dt });
        }
        let limit = monotone_step(h);
        if dt > limit && !self.allow_non_monotone {
            return Err(SolveError::NonMonotone { dt, limit });
        }
        if !(self.residual_tolerance.is_finite() && self.residual_tolerance > 0.0) {
            return Err(SolveError::Tolerance(self.residual_tolerance));
        }
        if self.residual_check_interval == 0 {
            return Err(SolveError::CheckInterval);
        }
        Ok(())
    }
}

/// Largest step keeping a nonnegative weight on the center value:
/// `1 - dt - dt/h² ≥ 0`.
pub fn monotone_step(h: f64) -> f64 {
    let h2 = h * h;
    h2 / (1.0 + h2)
}

/// `4 ⌈ln(r₀ / tol) / dt⌉`, capped at [`ITERATION_CAP`].
pub fn default_max_iterations(dt: f64, initial_residual: f64, tolerance: f64) -> u64 {
    if !(initial_residual > tolerance) {
        return 0;
    }
    let sweeps = libm::ceil(libm::log(initial_residual / tolerance) / dt) * 4.0;
    if sweeps >= ITERATION_CAP as f64 {
        ITERATION_CAP
    } else {
        sweeps as u64
    }
}

/// Snapshot handed to the observer between sweeps.
#[derive(Debug)]
pub struct Progress<'a> {
    /// Sweeps completed; `values` is `w_iteration`.
    pub iteration: u64,
    pub values: &'a [f64],
    /// Residual of the previous iterate.
    pub last_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Solved<L> {
    pub field: Field<L>,
    pub iterations: u64,
    /// Interior sup-norm residual of `field`.
    pub residual: f64,
    pub dt: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy)]
struct SweepStats {
    residual: f64,
    non_finite: bool,
}

impl SweepStats {
    fn merge(self, other: Self) -> Self {
        Self {
            residual: if other.residual > self.residual { other.residual } else { self.residual },
            non_finite: self.non_finite || other.non_finite,
        }
    }
}

/// One Jacobi sweep: writes `w_{k+1}` into `next` and returns the residual
/// of `cur`.
fn sweep<L: Lattice>(
    lattice: &L,
    source: &impl Source,
    cur: &[f64],
    next: &mut [f64],
    dt: f64,
    exec: &impl Executor,
) -> SweepStats {
    let h = lattice.spacing();
    let h2 = h * h;
    let keep = 1.0 - dt;
    exec.for_each_chunk(next, NODE_CHUNK, |offset, out| {
        let mut stats = SweepStats { residual: 0.0, non_finite: false };
        lattice.visit(offset..offset + out.len(), |node| {
            let w = cur[node.rank];
            let slot = &mut out[node.rank - offset];
            match node.stencil {
                Some(stencil) => {
                    let f = operator_at(cur, w, stencil, h, h2);
                    let g = source.eval(node.coords);
                    let r = (w - f - g).abs();
                    if r > stats.residual {
                        stats.residual = r;
                    }
                    let updated = keep * w + dt * (f + g);
                    stats.non_finite |= !updated.is_finite() || r.is_nan();
                    *slot = updated;
                }
                None => *slot = w,
            }
        });
        stats
    })
    .into_iter()
    .fold(SweepStats { residual: 0.0, non_finite: false }, SweepStats::merge)
}

/// Iterates from `initial` (which also carries the Dirichlet values) until
/// the residual tolerance is met. The observer sees every
/// `checkpoint_interval`-th iterate and may stop the run.
pub fn solve<L: Lattice>(
    lattice: L,
    source: &impl Source,
    initial: Vec<f64>,
    options: &SolveOptions,
    exec: &impl Executor,
    observer: &mut dyn FnMut(&Progress<'_>) -> ControlFlow<()>,
) -> Result<Solved<L>, SolveError> {
    options.validate(lattice.spacing())?;
    // Validates length and finiteness of the starting iterate.
    let (lattice, mut cur) = Field::new(lattice, initial)?.into_parts();
    let mut next = vec![0.0; cur.len()];
    let tol = options.residual_tolerance;
    let mut limit = options.max_iterations;
    let mut k = 0u64;
    loop {
        let stats = sweep(&lattice, source, &cur, &mut next, options.dt, exec);
        if stats.non_finite {
            return Err(SolveError::NonFinite { iteration: k + 1 });
        }
        let limit = *limit.get_or_insert_with(|| default_max_iterations(options.dt, stats.residual, tol));
        let due = k % options.residual_check_interval == 0 || k >= limit;
        if due && stats.residual <= tol {
            return Ok(Solved {
                field: Field::new(lattice, cur)?,
                iterations: k,
                residual: stats.residual,
                dt: options.dt,
                tolerance: tol,
            });
        }
        if k >= limit {
            return Err(SolveError::MaxIterations { iterations: k, residual: stats.residual });
        }
        core::mem::swap(&mut cur, &mut next);
        k += 1;
        if let Some(every) = options.checkpoint_interval.filter(|&e| e > 0) {
            if k % every == 0 {
                let progress = Progress { iteration: k, values: &cur, last_residual: stats.residual };
                if observer(&progress).is_break() {
                    return Err(SolveError::Interrupted { iteration: k });
                }
            }
        }
    }
}

/// Solves the sector problem: Dirichlet data `g` on `i₁ = m`, started from
/// `w₀ = g`.
pub fn solve_sector(
    config: GridConfig,
    options: &SolveOptions,
    mode: StencilMode,
    exec: &impl Executor,
) -> Result<Solved<SectorLattice>, SolveError> {
    let lattice = SectorLattice::new(config, mode, exec)?;
    let (lattice, initial) = Field::sample(lattice, &MaxPayoff).into_parts();
    solve(lattice, &MaxPayoff, initial, options, exec, &mut |_| ControlFlow::Continue(()))
}

/// Solves on the full box `[-T, T]^d` with `w = g` on its width-one layer.
pub fn solve_full(config: GridConfig, options: &SolveOptions, exec: &impl Executor) -> Result<Solved<FullGrid>, SolveError> {
    if config.dim() > FullGrid::MAX_DIM {
        return Err(SolveError::FullGridDimension { d: config.dim(), max: FullGrid::MAX_DIM });
    }
    let lattice = FullGrid::new(config)?;
    let (lattice, initial) = Field::sample(lattice, &MaxPayoff).into_parts();
    solve(lattice, &MaxPayoff, initial, options, exec, &mut |_| ControlFlow::Continue(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    const TABLE: StencilMode = StencilMode::Table { budget: u64::MAX };

    fn sector(n: usize, m: u32, h: f64) -> SectorLattice {
        SectorLattice::new(GridConfig::new(n, m, h).unwrap(), TABLE, &Serial).unwrap()
    }

    #[test]
    fn zero_source_is_a_fixed_point() {
        let l = sector(3, 10, 0.1);
        let zero = |_: &[f64]| 0.0;
        let initial = vec![0.0; l.len()];
        let opts = SolveOptions::for_spacing(0.1);
        let out = solve(l, &zero, initial, &opts, &Serial, &mut |_| ControlFlow::Continue(())).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn converged_residual_meets_tolerance() {
        let h = 0.1;
        let config = GridConfig::covering(3, h, 2.0).unwrap();
        let opts = SolveOptions::for_spacing(h);
        let out = solve_sector(config, &opts, TABLE, &Serial).unwrap();
        assert!(out.residual <= h * h / 100.0);
        let recomputed = out.field.residual(&MaxPayoff, &Serial);
        assert_eq!(recomputed, out.residual);
        // Boundary nodes keep the payoff.
        let grid = out.field.lattice().grid();
        for r in grid.interior_len()..grid.len() {
            let mut x = [0.0; 2];
            out.field.lattice().coords(r, &mut x);
            assert_eq!(out.field.values()[r], crate::payoff(&x));
        }
    }

    #[test]
    fn stencil_modes_are_bit_identical() {
        let h = 0.2;
        let config = GridConfig::covering(4, h, 2.0).unwrap();
        let opts = SolveOptions::for_spacing(h);
        let a = solve_sector(config, &opts, TABLE, &Serial).unwrap();
        let b = solve_sector(config, &opts, StencilMode::OnTheFly, &Serial).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.field.values(), b.field.values());
    }

    #[test]
    fn option_validation() {
        let h = 0.1;
        let mut opts = SolveOptions::for_spacing(h);
        opts.dt = 0.5;
        assert!(matches!(opts.validate(h), Err(SolveError::NonMonotone { .. })));
        opts.allow_non_monotone = true;
        assert!(opts.validate(h).is_ok());
        opts.dt = 0.0;
        assert!(matches!(opts.validate(h), Err(SolveError::Step { .. })));
        let mut opts = SolveOptions::for_spacing(h);
        opts.residual_tolerance = -1.0;
        assert!(matches!(opts.validate(h), Err(SolveError::Tolerance(_))));
        let mut opts = SolveOptions::for_spacing(h);
        opts.residual_check_interval = 0;
        assert!(matches!(opts.validate(h), Err(SolveError::CheckInterval)));
    }

    #[test]
    fn iteration_limit_is_reported() {
        let h = 0.1;
        let mut opts = SolveOptions::for_spacing(h);
        opts.max_iterations = Some(5);
        opts.residual_check_interval = 1;
        let err = solve_sector(GridConfig::covering(3, h, 2.0).unwrap(), &opts, TABLE, &Serial).unwrap_err();
        match err {
            SolveError::MaxIterations { iterations, residual } => {
                assert_eq!(iterations, 5);
                assert!(residual > opts.residual_tolerance);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_abort() {
        let l = sector(2, 10, 0.1);
        let blowup = |x: &[f64]| if x[0] > 0.45 && x[0] < 0.55 { f64::INFINITY } else { 0.0 };
        let initial = vec![0.0; l.len()];
        let opts = SolveOptions::for_spacing(0.1);
        let err = solve(l, &blowup, initial, &opts, &Serial, &mut |_| ControlFlow::Continue(())).unwrap_err();
        assert!(matches!(err, SolveError::NonFinite { iteration: 1 }));
    }

    #[test]
    fn observer_sees_checkpoints_and_can_stop() {
        let h = 0.1;
        let l = sector(3, 20, h);
        let (l, initial) = Field::sample(l, &MaxPayoff).into_parts();
        let mut opts = SolveOptions::for_spacing(h);
        opts.checkpoint_interval = Some(7);
        let mut seen = Vec::new();
        let err = solve(l, &MaxPayoff, initial, &opts, &Serial, &mut |p| {
            seen.push(p.iteration);
            if p.iteration >= 21 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap_err();
        assert_eq!(seen, [7, 14, 21]);
        assert_eq!(err, SolveError::Interrupted { iteration: 21 });
    }

    #[test]
    fn resuming_reproduces_an_uninterrupted_run() {
        let h = 0.1;
        let config = GridConfig::covering(3, h, 2.0).unwrap();
        let mut opts = SolveOptions::for_spacing(h);
        opts.residual_check_interval = 1;
        let full = solve_sector(config, &opts, TABLE, &Serial).unwrap();

        let (l, initial) = Field::sample(sector(3, config.m(), h), &MaxPayoff).into_parts();
        let mut chk = opts.clone();
        chk.checkpoint_interval = Some(50);
        let mut saved = Vec::new();
        let _ = solve(l, &MaxPayoff, initial, &chk, &Serial, &mut |p| {
            saved = p.values.to_vec();
            ControlFlow::Break(())
        });
        let resumed = solve(sector(3, config.m(), h), &MaxPayoff, saved, &opts, &Serial, &mut |_| {
            ControlFlow::Continue(())
        })
        .unwrap();
        assert_eq!(resumed.iterations + 50, full.iterations);
        assert_eq!(resumed.field.values(), full.field.values());
    }

    #[test]
    fn full_grid_rejects_high_dimension() {
        let config = GridConfig::new(5, 4, 0.5).unwrap();
        let err = solve_full(config, &SolveOptions::for_spacing(0.5), &Serial).unwrap_err();
        assert!(matches!(err, SolveError::FullGridDimension { d: 4, .. }));
    }

    #[test]
    fn default_limit_formula() {
        assert_eq!(default_max_iterations(0.5, 1.0, 2.0), 0);
        let k = default_max_iterations(0.01, 1.0, 1e-4);
        assert_eq!(k, 4 * libm::ceil(libm::log(1e4) / 0.01) as u64);
        assert_eq!(default_max_iterations(1e-12, 1e10, 1e-10), ITERATION_CAP);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn monotone_sweep_contracts(seed in proptest::collection::vec(-1.0f64..1.0, 2 * 21)) {
            // Two random fields with identical boundary data: one sweep
            // shrinks their sup distance by at least (1 - dt).
            let h = 0.25;
            let l = sector(3, 5, h);
            let n = l.len();
            let base = Field::sample(l.clone(), &MaxPayoff);
            let mut a = base.values().to_vec();
            let mut b = base.values().to_vec();
            for r in 0..l.grid().interior_len() {
                a[r] += seed[r];
                b[r] += seed[21 + r];
            }
            let dt = monotone_step(h);
            let mut na = vec![0.0; n];
            let mut nb = vec![0.0; n];
            sweep(&l, &MaxPayoff, &a, &mut na, dt, &Serial);
            sweep(&l, &MaxPayoff, &b, &mut nb, dt, &Serial);
            let before = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let after = na.iter().zip(&nb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(after <= (1.0 - dt) * before * (1.0 + 1e-12) + 1e-15);
        }
    }
}
