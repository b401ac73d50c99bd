//! Adversary strategies and how close each comes to optimal.
//!
//! A reduced direction `v ∈ {0,1}^d` acts on the full regret vector as
//! `(v, 0)`; since `v` and `𝟙 - v` are equivalent, each class is named by
//! its member with leading bit `0`, read as a binary number with `x₁` as the
//! most significant bit.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::analysis::{check_region, AnalysisError};
use crate::exec::{Executor, NODE_CHUNK};
use crate::lattice::Lattice;
use crate::operator::{payoff, second_difference, Field, MaxPayoff};
use crate::operator::residual_of;

/// A canonical adversary strategy for `n` experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyId {
    n: usize,
    id: u32,
}

impl StrategyId {
    /// Validates a canonical id: nonzero with leading bit `0`.
    pub fn new(n: usize, id: u32) -> Result<Self, AnalysisError> {
        if !(2..=crate::MAX_EXPERTS).contains(&n) || id == 0 || id >= 1 << (n - 1) {
            return Err(AnalysisError::StrategyId { id, n });
        }
        Ok(Self { n, id })
    }

    pub fn n_experts(&self) -> usize {
        self.n
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    /// Bit `k` of the result is the entry for expert `k + 1`.
    pub fn bit(&self, k: usize) -> bool {
        self.id >> (self.n - 1 - k) & 1 == 1
    }

    /// Full-space bits, first expert first.
    pub fn bits(&self) -> Vec<u8> {
        (0..self.n).map(|k| self.bit(k) as u8).collect()
    }

    /// The reduced direction mask (bit `k` ↔ coordinate `k + 1`) whose
    /// canonical form this is.
    pub fn reduced_mask(&self) -> usize {
        // The last expert's entry must be 0; complement if it is not.
        let flip = self.bit(self.n - 1);
        (0..self.n - 1).filter(|&k| self.bit(k) != flip).fold(0, |m, k| m | 1 << k)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n {
            f.write_str(if self.bit(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Canonical id of the reduced direction `mask` for `n` experts.
pub fn canonical_strategy(mask: usize, n: usize) -> Result<StrategyId, AnalysisError> {
    if !(2..=crate::MAX_EXPERTS).contains(&n) || mask >> (n - 1) != 0 {
        return Err(AnalysisError::StrategyId { id: mask as u32, n });
    }
    if mask == 0 {
        return Err(AnalysisError::ZeroStrategy);
    }
    let lead = mask & 1 == 1;
    let mut id = 0u32;
    for k in 0..n {
        let bit = k < n - 1 && mask >> k & 1 == 1;
        id = id << 1 | (bit != lead) as u32;
    }
    Ok(StrategyId { n, id })
}

/// The alternating strategy `(0, 1, 0, 1, …)`.
pub fn comb_strategy(n: usize) -> StrategyId {
    let id = (0..n).fold(0u32, |id, k| id << 1 | (k % 2) as u32);
    StrategyId { n, id }
}

/// Score summary for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub strategy: StrategyId,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub is_comb: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub n_experts: usize,
    pub spacing: f64,
    pub half_width: f64,
    pub region_bound: f64,
    /// Ordered by strategy id.
    pub rows: Vec<StrategyRow>,
    pub nodes_evaluated: u64,
    /// Nodes whose best second difference was too small to normalize by.
    pub nodes_skipped: u64,
    pub residual: f64,
    pub tolerance: f64,
}

impl StrategyReport {
    /// `false` when the field's residual is above the tolerance the scores
    /// were computed with.
    pub fn converged(&self) -> bool {
        self.residual <= self.tolerance
    }

    pub fn row(&self, id: u32) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy.id() == id)
    }

    /// Strategies sorted by decreasing min score (ties by id).
    pub fn ranking(&self) -> Vec<&StrategyRow> {
        let mut rows: Vec<&StrategyRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.min.total_cmp(&a.min).then(a.strategy.cmp(&b.strategy)));
        rows
    }
}

#[derive(Debug, Clone)]
struct Partial {
    min: Vec<f64>,
    max: Vec<f64>,
    sum: Vec<f64>,
    evaluated: u64,
    skipped: u64,
}

impl Partial {
    fn new(dirs: usize) -> Self {
        Self { min: vec![f64::INFINITY; dirs], max: vec![f64::NEG_INFINITY; dirs], sum: vec![0.0; dirs], evaluated: 0, skipped: 0 }
    }

    fn merge(&mut self, other: &Self) {
        for k in 0..self.min.len() {
            self.min[k] = self.min[k].min(other.min[k]);
            self.max[k] = self.max[k].max(other.max[k]);
            self.sum[k] += other.sum[k];
        }
        self.evaluated += other.evaluated;
        self.skipped += other.skipped;
    }
}

/// Scores `opt(x, v) = ∇²_h w(x, v) / max_u ∇²_h w(x, u)` for every strategy
/// over the interior sector nodes in the region.
///
/// The normalizer is the best second difference itself, which equals
/// `2(w - g)` up to the residual; nodes where it is at most
/// `10 · tolerance` are skipped. A field that has not converged to
/// `tolerance` still gets a report; check [`StrategyReport::converged`].
pub fn optimality_report<L: Lattice>(
    field: &Field<L>,
    region_bound: f64,
    tolerance: f64,
    exec: &impl Executor,
) -> Result<StrategyReport, AnalysisError> {
    let lattice = field.lattice();
    let config = *lattice.config();
    let h = config.spacing();
    let limit = check_region(region_bound, config.half_width(), h)?;
    let n = config.n_experts();
    let dirs = lattice.direction_count();
    let values = field.values();
    let floor = 10.0 * tolerance;
    let parts = exec.map_ranges(lattice.len(), NODE_CHUNK, |range| {
        let mut part = Partial::new(dirs);
        let mut hess = vec![0.0; dirs];
        lattice.visit(range, |node| {
            let Some(stencil) = node.stencil else { return };
            let sector = node.index.windows(2).all(|p| p[0] >= p[1]) && node.index.iter().all(|&i| i >= 0);
            if !sector || node.index.iter().any(|&i| i > limit) {
                return;
            }
            let w = values[node.rank];
            let mut best = f64::NEG_INFINITY;
            for (slot, &e) in hess.iter_mut().zip(stencil) {
                *slot = second_difference(values, w, e, h);
                best = best.max(*slot);
            }
            if !(best / (h * h) > floor) {
                part.skipped += 1;
                return;
            }
            part.evaluated += 1;
            for (k, &num) in hess.iter().enumerate() {
                let score = num / best;
                part.min[k] = part.min[k].min(score);
                part.max[k] = part.max[k].max(score);
                part.sum[k] += score;
            }
        });
        part
    });
    let mut total = Partial::new(dirs);
    for p in &parts {
        total.merge(p);
    }
    if total.evaluated == 0 {
        return Err(AnalysisError::EmptyRegion { bound: region_bound });
    }
    let comb = comb_strategy(n);
    let mut rows = Vec::with_capacity(dirs);
    for mask in 1..=dirs {
        let strategy = canonical_strategy(mask, n)?;
        let k = mask - 1;
        rows.push(StrategyRow {
            strategy,
            min: total.min[k],
            mean: total.sum[k] / total.evaluated as f64,
            max: total.max[k],
            is_comb: strategy == comb,
        });
    }
    rows.sort_by_key(|r| r.strategy);
    Ok(StrategyReport {
        n_experts: n,
        spacing: h,
        half_width: config.half_width(),
        region_bound,
        rows,
        nodes_evaluated: total.evaluated,
        nodes_skipped: total.skipped,
        residual: residual_of(lattice, values, &MaxPayoff, exec),
        tolerance,
    })
}

/// The player's mixed strategy at an interior node: forward differences
/// `(w(x + h eᵢ) - w(x)) / h` for the first `n - 1` experts, and
/// `1 - Σ` for the last, so the components sum to one.
pub fn player_strategy<L: Lattice>(field: &Field<L>, rank: usize) -> Result<Vec<f64>, AnalysisError> {
    let lattice = field.lattice();
    let d = lattice.dim();
    let h = lattice.spacing();
    let values = field.values();
    if rank >= values.len() {
        return Err(crate::operator::FieldError::Rank { rank }.into());
    }
    let mut out = Vec::with_capacity(d + 1);
    for k in 0..d {
        let e = lattice.neighbors(rank, 1 << k).ok_or(crate::operator::FieldError::Boundary { rank })?;
        out.push((values[e.plus()] - values[rank]) / h);
    }
    let rest: f64 = out.iter().sum();
    out.push(1.0 - rest);
    Ok(out)
}

/// `w - g` at a node; the quantity the optimality normalizer approximates.
pub fn payoff_gap<L: Lattice>(field: &Field<L>, rank: usize) -> f64 {
    let mut x = [0.0; crate::MAX_DIM];
    let d = field.lattice().dim();
    field.lattice().coords(rank, &mut x[..d]);
    field.values()[rank] - payoff(&x[..d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::exact_reduced;
    use crate::exec::Serial;
    use crate::lattice::{SectorLattice, StencilMode};
    use crate::sector::GridConfig;
    use crate::solver::{solve_sector, SolveOptions};
    use alloc::string::ToString;
    use proptest::prelude::*;

    #[test]
    fn canonical_examples() {
        // (1,0,1,0) → (1,0,1,0,0) → (0,1,0,1,1)
        let s = canonical_strategy(0b0101, 5).unwrap();
        assert_eq!(s.id(), 11);
        assert_eq!(s.bits(), [0, 1, 0, 1, 1]);
        assert_eq!(canonical_strategy(0b101, 4).unwrap().id(), 5);
        assert_eq!(canonical_strategy(0b10, 3).unwrap().id(), 2);
        assert_eq!(canonical_strategy(0b1, 2).unwrap().id(), 1);
        assert_eq!(canonical_strategy(0b1001, 5).unwrap().id(), 13);
        assert_eq!(canonical_strategy(0b0101, 5).unwrap().to_string(), "01011");
    }

    #[test]
    fn comb_examples() {
        assert_eq!(comb_strategy(2).id(), 1);
        assert_eq!(comb_strategy(3).id(), 2);
        assert_eq!(comb_strategy(4).id(), 5);
        assert_eq!(comb_strategy(5).id(), 10);
        assert_eq!(comb_strategy(5).to_string(), "01010");
    }

    #[test]
    fn rejects_degenerate_strategies() {
        assert_eq!(canonical_strategy(0, 4), Err(AnalysisError::ZeroStrategy));
        assert!(canonical_strategy(0b1000, 4).is_err());
        assert!(StrategyId::new(4, 0).is_err());
        assert!(StrategyId::new(4, 8).is_err());
        assert_eq!(StrategyId::new(4, 6).unwrap().reduced_mask(), 0b110);
    }

    #[test]
    fn ids_cover_every_canonical_class_once() {
        for n in 2..=8 {
            let d = n - 1;
            let mut seen = vec![false; 1 << d];
            for mask in 1..1usize << d {
                let s = canonical_strategy(mask, n).unwrap();
                assert!(!s.bit(0));
                assert!(!seen[s.id() as usize]);
                seen[s.id() as usize] = true;
                assert_eq!(s.reduced_mask(), mask);
            }
            assert!(!seen[0] && seen[1..].iter().all(|&b| b));
        }
    }

    fn exact_field(n: usize, m: u32, h: f64) -> Field<SectorLattice> {
        let lattice = SectorLattice::new(GridConfig::new(n, m, h).unwrap(), StencilMode::OnTheFly, &Serial).unwrap();
        Field::sample(lattice, &|x: &[f64]| exact_reduced(n, x).unwrap())
    }

    #[test]
    fn scores_are_normalized() {
        let f = exact_field(4, 20, 0.1);
        let report = optimality_report(&f, 1.0, 1e-4, &Serial).unwrap();
        assert_eq!(report.rows.len(), 7);
        assert_eq!(report.rows.iter().filter(|r| r.is_comb).count(), 1);
        for r in &report.rows {
            assert!(r.min <= r.mean && r.mean <= r.max && r.max <= 1.0);
        }
        assert!(report.nodes_evaluated > 0);
        // Sampling the exact solution does not make it a discrete solution.
        assert!(!report.converged());
    }

    #[test]
    fn exact_n3_field_ranks_the_known_optima() {
        let f = exact_field(3, 40, 0.05);
        let report = optimality_report(&f, 1.0, 0.05 * 0.05 / 100.0, &Serial).unwrap();
        let top: Vec<u32> = report.ranking().iter().take(2).map(|r| r.strategy.id()).collect();
        assert!(top.contains(&2) && top.contains(&3), "{top:?}");
        assert!(report.row(1).unwrap().min < 0.99);
    }

    #[test]
    fn region_checks() {
        let f = exact_field(3, 10, 0.1);
        assert!(matches!(optimality_report(&f, 0.95, 1e-4, &Serial), Err(AnalysisError::Region { .. })));
        assert!(optimality_report(&f, 0.9, 1e-4, &Serial).is_ok());
        // Only the origin is in the region and it is degenerate for a constant.
        let flat = Field::sample(f.lattice().clone(), &|_: &[f64]| 1.0);
        assert!(matches!(optimality_report(&flat, 0.0, 1e-4, &Serial), Err(AnalysisError::EmptyRegion { .. })));
    }

    #[test]
    fn two_expert_player_strategy_at_origin() {
        let h = 0.05;
        let solved = solve_sector(GridConfig::covering(2, h, 5.0).unwrap(), &SolveOptions::for_spacing(h), StencilMode::OnTheFly, &Serial).unwrap();
        let p = player_strategy(&solved.field, 0).unwrap();
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        for c in &p {
            assert!((c - 0.5).abs() <= 2.0 * h, "{p:?}");
        }
        assert!(payoff_gap(&solved.field, 0) > 0.3);
    }

    #[test]
    fn three_expert_player_strategy_follows_the_leader() {
        let f = exact_field(3, 60, 0.05);
        let rank = f.lattice().rank_of(&[20, 0]).unwrap();
        let p = player_strategy(&f, rank).unwrap();
        assert!(p[0] > 0.8 && p[1].abs() < 0.15 && p[2].abs() < 0.15, "{p:?}");
        let last = f.lattice().len() - 1;
        assert!(player_strategy(&f, last).is_err());
    }

    proptest! {
        #[test]
        fn complement_consistency(n in 2usize..=12, raw in 1usize..2048) {
            let d = n - 1;
            let mask = raw % ((1 << d) - 1) + 1;
            let s = canonical_strategy(mask, n).unwrap();
            // The complement of (v, 0) names the same class.
            let full: Vec<u8> = (0..n).map(|k| (k < d && mask >> k & 1 == 1) as u8).collect();
            let flipped: Vec<u8> = full.iter().map(|b| 1 - b).collect();
            let canon = if full[0] == 0 { full } else { flipped };
            prop_assert_eq!(s.bits(), canon);
            prop_assert_eq!(StrategyId::new(n, s.id()).unwrap(), s);
        }
    }
}
