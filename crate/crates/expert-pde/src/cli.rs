//! Command-line surface.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use bytesize::ByteSize;
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use expert_pde_core::analysis::{
    convergence_study, localization_study, optimality_report, property_report, AuditReport, DEFAULT_REGION,
};
use expert_pde_core::closed_form::exact_reduced;
use expert_pde_core::{
    solve, Executor, Field, FullGrid, GridConfig, Lattice, MaxPayoff, SectorLattice, SolveOptions, Solved, StencilMode,
};
use log::{info, warn};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::memory::{self, MemoryEstimate};
use crate::parallel::Parallel;
use crate::report;
use crate::snapshot::{self, GridKind, Snapshot, SnapshotHeader};

#[derive(Debug, Parser)]
#[command(name = "expert-pde", version, about = "Value function of the adversarial expert-advice game")]
pub struct Cli {
    /// Worker threads [default: $EXPERT_PDE_THREADS, else one per core]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve on the sector (or full) grid and write a field snapshot
    Solve(SolveArgs),
    /// Audit a snapshot; compares with the closed form for n <= 4
    Verify(VerifyArgs),
    /// Per-strategy optimality scores of a snapshot, as CSV
    Optimality(OptimalityArgs),
    /// Error against the closed form (or finest grid) over a resolution list
    Convergence(ConvergenceArgs),
    /// Sensitivity of the region to a Dirichlet perturbation, per box size
    Localization(LocalizationArgs),
    /// Node counts and memory estimate for a grid
    GridInfo(GridInfoArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Number of experts n
    #[arg(long)]
    pub experts: usize,
    /// Grid spacing h
    #[arg(long)]
    pub resolution: f64,
    /// Box half-width T, rounded up to a multiple of h
    #[arg(long = "box", default_value_t = 5.0)]
    pub half_width: f64,
}

impl GridArgs {
    pub fn config(&self) -> anyhow::Result<GridConfig> {
        covering(self.experts, self.resolution, self.half_width)
    }
}

fn covering(n: usize, h: f64, t: f64) -> anyhow::Result<GridConfig> {
    let config = GridConfig::covering(n, h, t)?;
    if (config.half_width() - t).abs() > 1e-9 * t.max(1.0) {
        warn!("box {t} is not a multiple of h = {h}; using T = m·h = {} (m = {})", config.half_width(), config.m());
    }
    Ok(config)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Sector grid, or the full box grid (n <= 4)
    #[arg(long, value_enum, default_value_t = GridKind::Sector)]
    pub grid_kind: GridKind,
    /// Relaxation step [default: h²/(1+h²)]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Sup-norm residual tolerance [default: h²/100]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Permit dt above the monotone limit
    #[arg(long)]
    pub allow_non_monotone: bool,
    /// Iteration limit [default: derived from the contraction rate]
    #[arg(long)]
    pub max_iterations: Option<u64>,
    /// Sweeps between residual checks
    #[arg(long, default_value_t = 100)]
    pub check_interval: u64,
    /// Sweeps between checkpoint snapshots written to --output
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Largest stencil table to precompute; larger grids resolve stencils on the fly
    #[arg(long, default_value = "4GiB")]
    #[serde(serialize_with = "as_bytes")]
    pub memory_budget: ByteSize,
    /// Continue from this snapshot's iterate
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Snapshot path
    #[arg(long, short)]
    pub output: PathBuf,
}

fn as_bytes<S: serde::Serializer>(b: &ByteSize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(b.as_u64())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Snapshot to check
    #[arg(long, short)]
    pub input: PathBuf,
    /// Region |x_i| <= bound used by the error and convexity checks
    #[arg(long, default_value_t = DEFAULT_REGION)]
    pub region: f64,
    /// JSON report path [default: stdout only]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimalityArgs {
    /// Snapshot to score
    #[arg(long, short)]
    pub input: PathBuf,
    /// Region |x_i| <= bound whose nodes are scored
    #[arg(long, default_value_t = DEFAULT_REGION)]
    pub region: f64,
    /// CSV report path
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvergenceArgs {
    /// Number of experts n
    #[arg(long)]
    pub experts: usize,
    /// Comma-separated spacings
    #[arg(long, value_delimiter = ',', required = true)]
    pub resolutions: Vec<f64>,
    /// Box half-width T
    #[arg(long = "box", default_value_t = 5.0)]
    pub half_width: f64,
    /// Region |x_i| <= bound over which errors are measured
    #[arg(long, default_value_t = DEFAULT_REGION)]
    pub region: f64,
    /// Largest stencil table to precompute
    #[arg(long, default_value = "4GiB")]
    #[serde(serialize_with = "as_bytes")]
    pub memory_budget: ByteSize,
    /// CSV report path
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LocalizationArgs {
    /// Number of experts n
    #[arg(long)]
    pub experts: usize,
    /// Grid spacing h
    #[arg(long)]
    pub resolution: f64,
    /// Comma-separated box half-widths
    #[arg(long, value_delimiter = ',', required = true)]
    pub boxes: Vec<f64>,
    /// Added to the Dirichlet data
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Region |x_i| <= bound over which differences are measured
    #[arg(long, default_value_t = DEFAULT_REGION)]
    pub region: f64,
    /// CSV report path
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridInfoArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Sector grid, or the full box grid (n <= 4)
    #[arg(long, value_enum, default_value_t = GridKind::Sector)]
    pub grid_kind: GridKind,
    /// Largest stencil table to precompute
    #[arg(long, default_value = "4GiB")]
    #[serde(serialize_with = "as_bytes")]
    pub memory_budget: ByteSize,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = Parallel::from_env(cli.threads)?;
    match cli.command {
        Command::Solve(a) => solve_command(&a, &exec).map(|_| ()),
        Command::Verify(a) => verify_command(&a, &exec),
        Command::Optimality(a) => optimality_command(&a, &exec),
        Command::Convergence(a) => convergence_command(&a, &exec),
        Command::Localization(a) => localization_command(&a, &exec),
        Command::GridInfo(a) => grid_info_command(&a),
    }
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub header: SnapshotHeader,
    pub resumed_from: Option<u64>,
    pub uses_stencil_table: bool,
}

/// Runs `solve`, returning the header of the written snapshot.
pub fn solve_command(args: &SolveArgs, exec: &Parallel) -> anyhow::Result<SnapshotHeader> {
    let started = Utc::now();
    let config = args.grid.config()?;
    let h = config.spacing();
    let defaults = SolveOptions::for_spacing(h);
    let options = SolveOptions {
        dt: args.dt.unwrap_or(defaults.dt),
        residual_tolerance: args.tolerance.unwrap_or(defaults.residual_tolerance),
        max_iterations: args.max_iterations,
        residual_check_interval: args.check_interval,
        checkpoint_interval: args.checkpoint_interval,
        allow_non_monotone: args.allow_non_monotone,
    };
    options.validate(h)?;
    let resume = args.resume.as_deref().map(snapshot::load).transpose()?;
    if let Some(snap) = &resume {
        let stored = snap.config();
        ensure!(
            snap.header.kind == args.grid_kind
                && stored.n_experts() == config.n_experts()
                && stored.m() == config.m()
                && stored.spacing().to_bits() == h.to_bits(),
            "snapshot {} holds a {:?} grid with n = {}, m = {}, h = {}, which does not match the requested solve",
            args.resume.as_ref().unwrap().display(),
            snap.header.kind,
            stored.n_experts(),
            stored.m(),
            stored.spacing(),
        );
    }
    let budget = args.memory_budget.as_u64();
    let estimate = memory::estimate(args.grid_kind, &config, budget)?;
    info!(
        "{} experts, h = {h}, T = {}: {} nodes, ~{} ({})",
        config.n_experts(),
        config.half_width(),
        estimate.nodes,
        ByteSize(estimate.total_bytes),
        if estimate.uses_table { "stencil table" } else { "on-the-fly stencils" }
    );
    let prior = resume.as_ref().map(|s| s.header.iterations);
    let header = match args.grid_kind {
        GridKind::Sector => {
            let lattice = SectorLattice::new(config, StencilMode::Auto { budget }, exec)?;
            drive(lattice, GridKind::Sector, resume, &options, exec, &args.output)?
        }
        GridKind::Full => {
            if config.dim() > FullGrid::MAX_DIM {
                bail!("full-grid solves support at most {} experts", FullGrid::MAX_DIM + 1);
            }
            drive(FullGrid::new(config)?, GridKind::Full, resume, &options, exec, &args.output)?
        }
    };
    println!(
        "solved n={} h={} m={} nodes={} iterations={} residual={:e} -> {}",
        header.n_experts,
        header.h,
        header.m,
        header.count,
        header.iterations,
        header.residual,
        args.output.display()
    );
    let summary = SolveSummary { header, resumed_from: prior, uses_stencil_table: estimate.uses_table };
    RunManifest::new("solve", exec.workers(), started, args, vec![args.output.clone()], summary)
        .write_beside(&args.output)?;
    Ok(header)
}

fn drive<L: Lattice>(
    lattice: L,
    kind: GridKind,
    resume: Option<Snapshot>,
    options: &SolveOptions,
    exec: &Parallel,
    output: &Path,
) -> anyhow::Result<SnapshotHeader> {
    let prior = resume.as_ref().map_or(0, |s| s.header.iterations);
    let (lattice, sampled) = Field::sample(lattice, &MaxPayoff).into_parts();
    let initial = match resume {
        Some(s) => s.values,
        None => sampled,
    };
    let config = *lattice.config();
    let mut failure = None;
    let mut checkpoint = |p: &expert_pde_core::solver::Progress<'_>| {
        let header = SnapshotHeader {
            kind,
            n_experts: config.n_experts() as u32,
            m: config.m() as u64,
            h: config.spacing(),
            count: p.values.len() as u64,
            dt: options.dt,
            tolerance: options.residual_tolerance,
            residual: p.last_residual,
            iterations: prior + p.iteration,
        };
        match snapshot::save(output, &header, p.values) {
            Ok(()) => {
                info!("checkpoint at iteration {}: residual {:e}", header.iterations, p.last_residual);
                ControlFlow::Continue(())
            }
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    };
    let result = solve(lattice, &MaxPayoff, initial, options, exec, &mut checkpoint);
    if let Some(e) = failure {
        return Err(e).context("writing checkpoint");
    }
    let mut solved = result?;
    solved.iterations += prior;
    let header = SnapshotHeader::for_solved(kind, &solved);
    snapshot::save(output, &header, solved.field.values())?;
    Ok(header)
}

/// Rebuilds the lattice a snapshot was computed on.
fn with_field<R>(
    snap: Snapshot,
    budget: u64,
    exec: &Parallel,
    sector: impl FnOnce(Field<SectorLattice>) -> anyhow::Result<R>,
    full: impl FnOnce(Field<FullGrid>) -> anyhow::Result<R>,
) -> anyhow::Result<R> {
    let config = snap.config();
    match snap.header.kind {
        GridKind::Sector => {
            let lattice = SectorLattice::new(config, StencilMode::Auto { budget }, exec)?;
            sector(Field::new(lattice, snap.values)?)
        }
        GridKind::Full => full(Field::new(FullGrid::new(config)?, snap.values)?),
    }
}

#[derive(Debug, Serialize)]
pub struct CheckRecord {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub header: SnapshotHeader,
    pub region_bound: f64,
    /// Sup error against the closed form on the region (n <= 4).
    pub oracle_sup_error: Option<f64>,
    pub checks: Vec<CheckRecord>,
    pub passed: bool,
}

fn oracle_error<L: Lattice>(field: &Field<L>, region: f64) -> Option<f64> {
    let n = field.lattice().config().n_experts();
    if n > 4 {
        return None;
    }
    let h = field.lattice().spacing();
    let limit = (region / h + 1e-9 * (region / h).max(1.0)).floor() as i32;
    let mut worst = 0.0f64;
    let values = field.values();
    field.lattice().visit(0..values.len(), |node| {
        if node.index.iter().all(|i| i.abs() <= limit) {
            let u = exact_reduced(n, node.coords).expect("n checked above");
            worst = worst.max((values[node.rank] - u).abs());
        }
    });
    Some(worst)
}

fn audit<L: Lattice>(field: Field<L>, tol: f64, region: f64, exec: &Parallel) -> anyhow::Result<(AuditReport, Option<f64>)> {
    Ok((property_report(&field, tol, region, exec)?, oracle_error(&field, region)))
}

pub fn verify_command(args: &VerifyArgs, exec: &Parallel) -> anyhow::Result<()> {
    let started = Utc::now();
    let snap = snapshot::load(&args.input)?;
    let header = snap.header;
    let tol = header.tolerance;
    let (audit, oracle) = with_field(
        snap,
        u64::MAX,
        exec,
        |f| audit(f, tol, args.region, exec),
        |f| audit(f, tol, args.region, exec),
    )?;
    let report = VerifyReport {
        header,
        region_bound: args.region,
        oracle_sup_error: oracle,
        checks: audit
            .checks
            .iter()
            .map(|c| CheckRecord { name: c.name, passed: c.passed, value: c.value, threshold: c.threshold })
            .collect(),
        passed: audit.passed(),
    };
    if let Some(e) = oracle {
        println!("sup error vs closed form on |x| <= {}: {e:.6e} (h² = {:.3e})", args.region, header.h * header.h);
    }
    for c in &report.checks {
        println!("{:<12} {} value={:.6e} threshold={:.6e}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.value, c.threshold);
    }
    if let Some(out) = &args.output {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        RunManifest::new("verify", exec.workers(), started, args, vec![out.clone()], &report).write_beside(out)?;
    }
    ensure!(report.passed, "property audit failed");
    Ok(())
}

pub fn optimality_command(args: &OptimalityArgs, exec: &Parallel) -> anyhow::Result<()> {
    let started = Utc::now();
    let snap = snapshot::load(&args.input)?;
    let tol = snap.header.tolerance;
    let region = args.region;
    let report = with_field(
        snap,
        u64::MAX,
        exec,
        |f| Ok(optimality_report(&f, region, tol, exec)?),
        |f| Ok(optimality_report(&f, region, tol, exec)?),
    )?;
    if !report.converged() {
        warn!("field residual {:e} exceeds its tolerance {:e}; scores may be unreliable", report.residual, tol);
    }
    let records = report::optimality_records(&report);
    report::save_csv(&args.output, &records)?;
    for r in report.ranking() {
        println!(
            "{:>5} {}  min={:.12} mean={:.6} max={:.6}{}",
            r.strategy.id(),
            r.strategy,
            r.min,
            r.mean,
            r.max,
            if r.is_comb { "  COMB" } else { "" }
        );
    }
    #[derive(Serialize)]
    struct Summary {
        nodes_evaluated: u64,
        nodes_skipped: u64,
        residual: f64,
        tolerance: f64,
        best_strategy: u32,
    }
    let summary = Summary {
        nodes_evaluated: report.nodes_evaluated,
        nodes_skipped: report.nodes_skipped,
        residual: report.residual,
        tolerance: tol,
        best_strategy: report.ranking()[0].strategy.id(),
    };
    RunManifest::new("optimality", exec.workers(), started, args, vec![args.output.clone()], summary)
        .write_beside(&args.output)?;
    Ok(())
}

pub fn convergence_command(args: &ConvergenceArgs, exec: &Parallel) -> anyhow::Result<()> {
    let started = Utc::now();
    let configs = args
        .resolutions
        .iter()
        .map(|&h| covering(args.experts, h, args.half_width))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mode = StencilMode::Auto { budget: args.memory_budget.as_u64() };
    let study = convergence_study(&configs, args.region, mode, exec, &mut |c, s: &Solved<SectorLattice>| {
        info!("h = {}: {} iterations, residual {:e}", c.spacing(), s.iterations, s.residual);
    })?;
    let records = report::convergence_records(&study);
    report::save_csv(&args.output, &records)?;
    for r in &study.rows {
        println!("h={:<8} error={:.6e} slope={}", r.h, r.sup_error, r.local_slope.map_or("-".into(), |s| format!("{s:.3}")));
    }
    println!("fitted slope {:.4}", study.fitted_slope);
    RunManifest::new("convergence", exec.workers(), started, args, vec![args.output.clone()], &records)
        .write_beside(&args.output)?;
    Ok(())
}

pub fn localization_command(args: &LocalizationArgs, exec: &Parallel) -> anyhow::Result<()> {
    let started = Utc::now();
    for &t in &args.boxes {
        covering(args.experts, args.resolution, t)?;
    }
    let rows = localization_study(
        args.experts,
        args.resolution,
        &args.boxes,
        args.delta,
        args.region,
        StencilMode::Auto { budget: 4 << 30 },
        exec,
    )?;
    let records = report::localization_records(&rows);
    report::save_csv(&args.output, &records)?;
    for r in &rows {
        println!("T={:<6} difference={:.6e}", r.half_width, r.sup_difference);
    }
    RunManifest::new("localization", exec.workers(), started, args, vec![args.output.clone()], &records)
        .write_beside(&args.output)?;
    Ok(())
}

pub fn grid_info(args: &GridInfoArgs) -> anyhow::Result<(GridConfig, MemoryEstimate)> {
    let config = args.grid.config()?;
    let estimate = memory::estimate(args.grid_kind, &config, args.memory_budget.as_u64())?;
    Ok((config, estimate))
}

fn grid_info_command(args: &GridInfoArgs) -> anyhow::Result<()> {
    let (config, e) = grid_info(args)?;
    println!("experts          {}", config.n_experts());
    println!("dimension        {}", config.dim());
    println!("spacing          {}", config.spacing());
    println!("half-width       {} (m = {})", config.half_width(), config.m());
    println!("nodes            {}", e.nodes);
    println!("interior nodes   {}", e.interior_nodes);
    println!("directions       {}", e.directions);
    println!("value buffers    {} ({})", e.value_bytes, ByteSize(e.value_bytes));
    println!("stencil table    {} ({})", e.stencil_table_bytes, ByteSize(e.stencil_table_bytes));
    println!("rank tables      {} ({})", e.rank_table_bytes, ByteSize(e.rank_table_bytes));
    println!(
        "estimate         {} ({}, {})",
        e.total_bytes,
        ByteSize(e.total_bytes),
        if e.uses_table { "with stencil table" } else { "stencils on the fly" }
    );
    Ok(())
}
