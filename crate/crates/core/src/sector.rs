//! The positive ordered sector `𝔻⁺_d ∩ [0, T]^d` and its stencils.
//!
//! All geometry is in integer lattice units (multiples of `h`). A node is a
//! non-increasing tuple `m ≥ i₁ ≥ i₂ ≥ … ≥ i_d ≥ 0`; nodes are ranked in
//! ascending lexicographic order through the combinatorial number system:
//! with `j_k = i_k + d - k` (strictly decreasing),
//!
//! ```text
//! rank(i) = Σ_k C(j_k, d - k + 1)
//! ```
//!
//! which does not depend on `m`. Interior nodes (`i₁ ≤ m - 1`) are therefore
//! exactly the ranks below `C(m - 1 + d, d)` and the Dirichlet layer
//! `i₁ = m` is a contiguous tail.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use thiserror::Error;

use crate::exec::{Executor, NODE_CHUNK};
use crate::{MAX_DIM, MAX_EXPERTS};

/// Largest node count a grid may have; ranks are stored in 31 bits.
pub const MAX_NODES: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("number of experts must lie in 2..={MAX_EXPERTS}, got {0}")]
    Experts(usize),
    #[error("need at least two grid layers above zero, got m = {0}")]
    TooCoarse(u64),
    #[error("grid spacing must be positive and finite, got {0}")]
    Spacing(f64),
    #[error("box half-width must be positive and finite, got {0}")]
    HalfWidth(f64),
    #[error("node count for d = {d}, m = {m} overflows 64 bits")]
    Overflow { d: usize, m: u64 },
    #[error("grid has {count} nodes; at most {MAX_NODES} are addressable")]
    TooLarge { count: u64 },
    #[error("{0} is not a sector node of this grid")]
    OutOfSector(MultiIndex),
    #[error("{0} is not non-increasing")]
    NotSorted(MultiIndex),
    #[error("{0} has entries below -1 and cannot be lifted")]
    NotLiftable(MultiIndex),
    #[error("{0} lies on the Dirichlet boundary")]
    BoundaryNode(MultiIndex),
    #[error("direction mask {mask} is not a nonzero binary vector of length {d}")]
    Direction { mask: usize, d: usize },
    #[error("stencil table needs {required} bytes but the budget is {budget}; use on-the-fly mode")]
    Budget { required: u64, budget: u64 },
    #[error("rank {rank} out of range for a grid of {count} nodes")]
    Rank { rank: usize, count: usize },
}

/// A discrete problem instance: `n` experts, spacing `h`, box half-width
/// `T = m h` (stored as `(m, h)` only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    n_experts: usize,
    m: u32,
    h: f64,
}

impl GridConfig {
    pub fn new(n_experts: usize, m: u32, h: f64) -> Result<Self, GridError> {
        if !(2..=MAX_EXPERTS).contains(&n_experts) {
            return Err(GridError::Experts(n_experts));
        }
        if m < 2 {
            return Err(GridError::TooCoarse(m.into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(GridError::Spacing(h));
        }
        Ok(Self { n_experts, m, h })
    }

    /// Smallest grid of spacing `h` whose box contains `[0, half_width]`,
    /// i.e. `m = ⌈half_width / h⌉`. Callers compare [`half_width`] with the
    /// request to detect rounding.
    ///
    /// [`half_width`]: GridConfig::half_width
    pub fn covering(n_experts: usize, h: f64, half_width: f64) -> Result<Self, GridError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(GridError::Spacing(h));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::HalfWidth(half_width));
        }
        let ratio = half_width / h;
        // Absorb representation error so that 5 / 0.05 gives m = 100.
        let m = libm::ceil(ratio - 1e-9 * ratio.max(1.0));
        if m > u32::MAX as f64 {
            return Err(GridError::Overflow { d: n_experts.saturating_sub(1), m: u64::MAX });
        }
        Self::new(n_experts, m as u32, h)
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    /// Reduced dimension `d = n - 1`.
    pub fn dim(&self) -> usize {
        self.n_experts - 1
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn half_width(&self) -> f64 {
        self.m as f64 * self.h
    }

    /// The default stopping threshold `h² / 100`.
    pub fn default_tolerance(&self) -> f64 {
        self.h * self.h / 100.0
    }
}

/// A lattice point in index units, at most [`MAX_DIM`] coordinates.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    coords: [i32; MAX_DIM],
    len: u8,
}

impl MultiIndex {
    /// # Panics
    /// If `coords` has more than [`MAX_DIM`] entries.
    pub fn new(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut out = Self::zeros(coords.len());
        out.coords[..coords.len()].copy_from_slice(coords);
        out
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_DIM, "at most {MAX_DIM} coordinates");
        Self { coords: [0; MAX_DIM], len: len as u8 }
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.coords[..self.len as usize]
    }

    pub fn as_mut_slice(&mut self) -> &mut [i32] {
        &mut self.coords[..self.len as usize]
    }

    pub fn is_non_increasing(&self) -> bool {
        self.as_slice().windows(2).all(|w| w[0] >= w[1])
    }
}

impl Deref for MultiIndex {
    type Target = [i32];

    fn deref(&self) -> &[i32] {
        self.as_slice()
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("MultiIndex").field(&self.as_slice()).finish()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (k, c) in self.as_slice().iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

/// The sorting map: coordinates of `t` in non-increasing order.
pub fn sort_point(t: &[i32]) -> MultiIndex {
    let mut out = MultiIndex::new(t);
    out.as_mut_slice().sort_unstable_by(|a, b| b.cmp(a));
    out
}

/// The lifting map for a sorted tuple whose negative entries are all `-1`.
///
/// Returns `(t, false)` when `t` is already nonnegative. Otherwise, with `i`
/// the first negative position, returns `(t + 𝟙 + e_i, true)`; the caller
/// owes a `-h` correction on the value read there.
pub fn lift(t: &[i32]) -> Result<(MultiIndex, bool), GridError> {
    let mut out = MultiIndex::new(t);
    if !out.is_non_increasing() {
        return Err(GridError::NotSorted(out));
    }
    let Some(first) = t.iter().position(|&c| c < 0) else {
        return Ok((out, false));
    };
    if t[first..].iter().any(|&c| c < -1) {
        return Err(GridError::NotLiftable(out));
    }
    let coords = out.as_mut_slice();
    for c in coords.iter_mut() {
        *c += 1;
    }
    coords[first] += 1;
    Ok((out, true))
}

/// `C(m + d, d)`, the number of sector nodes with `i₁ ≤ m`.
pub fn grid_count(d: usize, m: u64) -> Result<u64, GridError> {
    let overflow = || GridError::Overflow { d, m };
    let mut c: u128 = 1;
    for k in 1..=d as u128 {
        // C(m + k, k) = C(m + k - 1, k - 1) · (m + k) / k, exact at every step.
        c = c.checked_mul(m as u128 + k).ok_or_else(overflow)? / k;
        if c > u64::MAX as u128 {
            return Err(overflow());
        }
    }
    Ok(c as u64)
}

/// Resolved neighbors of one interior node in one direction. Ranks are kept
/// in 31 bits; the top bit of the minus slot carries the lift flag.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct StencilEntry {
    plus: u32,
    minus: u32,
}

impl StencilEntry {
    const FLAG: u32 = 1 << 31;

    pub fn new(plus: usize, minus: usize, correction: bool) -> Self {
        debug_assert!((plus as u64) < MAX_NODES && (minus as u64) < MAX_NODES);
        Self { plus: plus as u32, minus: minus as u32 | if correction { Self::FLAG } else { 0 } }
    }

    #[inline]
    pub fn plus(&self) -> usize {
        self.plus as usize
    }

    #[inline]
    pub fn minus(&self) -> usize {
        (self.minus & !Self::FLAG) as usize
    }

    /// Whether the minus neighbor was lifted back into the sector.
    #[inline]
    pub fn correction(&self) -> bool {
        self.minus & Self::FLAG != 0
    }
}

/// Enumeration of `𝔻⁺_d ∩ [0, m]^d` with its rank/unrank bijection.
#[derive(Debug, Clone)]
pub struct SectorGrid {
    config: GridConfig,
    count: usize,
    interior: usize,
    /// `binom[b * stride + a] = C(a, b)` for `1 ≤ b ≤ d`, `a ≤ m + d`.
    binom: Vec<u64>,
    stride: usize,
}

impl SectorGrid {
    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        let d = config.dim();
        let m = config.m() as u64;
        let count = grid_count(d, m)?;
        if count > MAX_NODES {
            return Err(GridError::TooLarge { count });
        }
        let interior = grid_count(d, m - 1)? as usize;
        let stride = m as usize + d + 1;
        let mut binom = vec![0u64; (d + 1) * stride];
        for a in 0..stride {
            binom[a] = 1;
        }
        for b in 1..=d {
            for a in b..stride {
                binom[b * stride + a] =
                    binom[(b - 1) * stride + a - 1].saturating_add(binom[b * stride + a - 1]);
            }
        }
        Ok(Self { config, count: count as usize, interior, binom, stride })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn m(&self) -> u32 {
        self.config.m()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Number of nodes with `i₁ ≤ m - 1`; they occupy ranks `0..interior_len()`.
    pub fn interior_len(&self) -> usize {
        self.interior
    }

    pub fn is_interior(&self, rank: usize) -> bool {
        rank < self.interior
    }

    /// Number of nonzero binary directions, `2^d - 1`.
    pub fn direction_count(&self) -> usize {
        (1 << self.dim()) - 1
    }

    /// Bytes held by the rank tables themselves.
    pub fn table_bytes(&self) -> usize {
        self.binom.len() * core::mem::size_of::<u64>()
    }

    #[inline]
    fn binomial(&self, a: usize, b: usize) -> u64 {
        self.binom[b * self.stride + a]
    }

    pub fn contains(&self, i: &[i32]) -> bool {
        i.len() == self.dim()
            && i.windows(2).all(|w| w[0] >= w[1])
            && i.last().is_some_and(|&c| c >= 0)
            && i[0] <= self.m() as i32
    }

    pub fn rank(&self, i: &[i32]) -> Result<usize, GridError> {
        if !self.contains(i) {
            return Err(GridError::OutOfSector(MultiIndex::new(&i[..i.len().min(MAX_DIM)])));
        }
        Ok(self.rank_unchecked(i))
    }

    /// Rank of a tuple already known to be in the sector.
    #[inline]
    pub fn rank_unchecked(&self, i: &[i32]) -> usize {
        let d = i.len();
        let mut r = 0u64;
        for (k, &c) in i.iter().enumerate() {
            r += self.binomial(c as usize + d - 1 - k, d - k);
        }
        r as usize
    }

    pub fn unrank(&self, rank: usize) -> Result<MultiIndex, GridError> {
        if rank >= self.count {
            return Err(GridError::Rank { rank, count: self.count });
        }
        let d = self.dim();
        let mut out = MultiIndex::zeros(d);
        let mut rem = rank as u64;
        let mut upper = self.m() as usize;
        for k in 0..d {
            // Largest c ≤ upper with C(c + d - 1 - k, d - k) ≤ rem.
            let (mut lo, mut hi) = (0usize, upper);
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                if self.binomial(mid + d - 1 - k, d - k) <= rem {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            rem -= self.binomial(lo + d - 1 - k, d - k);
            out.as_mut_slice()[k] = lo as i32;
            upper = lo;
        }
        debug_assert_eq!(rem, 0);
        Ok(out)
    }

    /// Steps `i` to its lexicographic successor in the sector. Returns
    /// `false` (leaving `i` unspecified) past the last node.
    #[inline]
    pub fn advance(&self, i: &mut [i32]) -> bool {
        let m = self.m() as i32;
        for k in (0..i.len()).rev() {
            let bound = if k == 0 { m } else { i[k - 1] };
            if i[k] < bound {
                i[k] += 1;
                for c in &mut i[k + 1..] {
                    *c = 0;
                }
                return true;
            }
        }
        false
    }

    /// Neighbors of interior node `i` along the binary direction `mask`
    /// (bit `k` set means `v_k = 1`).
    pub fn resolve_neighbors(&self, i: &[i32], mask: usize) -> Result<StencilEntry, GridError> {
        let d = self.dim();
        if mask == 0 || mask >> d != 0 {
            return Err(GridError::Direction { mask, d });
        }
        if !self.contains(i) {
            return Err(GridError::OutOfSector(MultiIndex::new(&i[..i.len().min(MAX_DIM)])));
        }
        if i[0] >= self.m() as i32 {
            return Err(GridError::BoundaryNode(MultiIndex::new(i)));
        }
        Ok(self.resolve_unchecked(i, mask))
    }

    /// [`resolve_neighbors`](Self::resolve_neighbors) without validation.
    #[inline]
    pub fn resolve_unchecked(&self, i: &[i32], mask: usize) -> StencilEntry {
        let d = i.len();
        let mut up = [0i32; MAX_DIM];
        let mut down = [0i32; MAX_DIM];
        for k in 0..d {
            let v = ((mask >> k) & 1) as i32;
            up[k] = i[k] + v;
            down[k] = i[k] - v;
        }
        let up = sort_point(&up[..d]);
        let down = sort_point(&down[..d]);
        let (lifted, correction) = lift(&down).expect("sector neighbors are liftable");
        StencilEntry::new(self.rank_unchecked(&up), self.rank_unchecked(&lifted), correction)
    }
}

/// Stencil entries for every interior node and nonzero direction, stored
/// node-major: entry `(r, mask)` lives at `r * (2^d - 1) + mask - 1`.
#[derive(Debug, Clone)]
pub struct StencilTable {
    dirs: usize,
    entries: Vec<StencilEntry>,
}

impl StencilTable {
    /// Bytes the table would occupy for `grid`.
    pub fn estimate_bytes(grid: &SectorGrid) -> u64 {
        grid.interior_len() as u64 * grid.direction_count() as u64 * core::mem::size_of::<StencilEntry>() as u64
    }

    /// Precomputes all stencils, refusing when the table would exceed
    /// `budget` bytes.
    pub fn build(grid: &SectorGrid, budget: u64, exec: &impl Executor) -> Result<Self, GridError> {
        let required = Self::estimate_bytes(grid);
        if required > budget {
            return Err(GridError::Budget { required, budget });
        }
        let dirs = grid.direction_count();
        let mut entries = vec![StencilEntry::default(); grid.interior_len() * dirs];
        exec.for_each_chunk(&mut entries, NODE_CHUNK * dirs, |offset, chunk| {
            let mut idx = grid.unrank(offset / dirs).expect("chunk start is a valid rank");
            for node in chunk.chunks_mut(dirs) {
                for (slot, mask) in node.iter_mut().zip(1..) {
                    *slot = grid.resolve_unchecked(&idx, mask);
                }
                grid.advance(idx.as_mut_slice());
            }
        });
        Ok(Self { dirs, entries })
    }

    pub fn direction_count(&self) -> usize {
        self.dirs
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All directions of interior node `rank`.
    #[inline]
    pub fn node(&self, rank: usize) -> &[StencilEntry] {
        &self.entries[rank * self.dirs..(rank + 1) * self.dirs]
    }

    pub fn get(&self, rank: usize, mask: usize) -> StencilEntry {
        self.entries[rank * self.dirs + mask - 1]
    }

    pub fn memory_bytes(&self) -> usize {
        self.entries.len() * core::mem::size_of::<StencilEntry>()
    }
}
