//! Node sets the solver can sweep: the sector grid (with precomputed or
//! on-the-fly stencils) and the full box grid used for cross-validation.

use core::ops::Range;

use crate::exec::Executor;
use crate::sector::{GridConfig, GridError, MultiIndex, SectorGrid, StencilEntry, StencilTable};
use crate::MAX_DIM;

/// Everything a sweep needs to know about one node.
#[derive(Debug)]
pub struct NodeView<'a> {
    pub rank: usize,
    /// Lattice coordinates in units of `h`.
    pub index: &'a [i32],
    /// Real coordinates `index · h`.
    pub coords: &'a [f64],
    /// Neighbors for directions `mask = 1..2^d`, at position `mask - 1`;
    /// `None` on Dirichlet nodes.
    pub stencil: Option<&'a [StencilEntry]>,
}

pub trait Lattice: Sync {
    fn config(&self) -> &GridConfig;

    /// Reduced dimension `d`.
    fn dim(&self) -> usize;

    fn spacing(&self) -> f64;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_interior(&self, rank: usize) -> bool;

    fn index(&self, rank: usize) -> MultiIndex;

    /// Rank of a lattice point stored by this lattice, if any.
    fn rank_of(&self, index: &[i32]) -> Option<usize>;

    /// Neighbors of interior node `rank` along `mask`, or `None` for a
    /// Dirichlet node.
    fn neighbors(&self, rank: usize, mask: usize) -> Option<StencilEntry>;

    /// Calls `f` for every node in `range`, in rank order.
    fn visit<F: FnMut(&NodeView<'_>)>(&self, range: Range<usize>, f: F);

    fn direction_count(&self) -> usize {
        (1 << self.dim()) - 1
    }

    /// Real coordinates of a node.
    fn coords(&self, rank: usize, out: &mut [f64]) {
        let h = self.spacing();
        for (x, &i) in out.iter_mut().zip(self.index(rank).iter()) {
            *x = i as f64 * h;
        }
    }
}

/// How sector stencils are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilMode {
    /// Precompute the table, failing if it exceeds the byte budget.
    Table { budget: u64 },
    /// Recompute sort, lift and rank at every access.
    OnTheFly,
    /// Table when it fits in the budget, on-the-fly otherwise.
    Auto { budget: u64 },
}

#[derive(Debug, Clone)]
pub struct SectorLattice {
    grid: SectorGrid,
    table: Option<StencilTable>,
}

impl SectorLattice {
    pub fn new(config: GridConfig, mode: StencilMode, exec: &impl Executor) -> Result<Self, GridError> {
        Self::from_grid(SectorGrid::new(config)?, mode, exec)
    }

    pub fn from_grid(grid: SectorGrid, mode: StencilMode, exec: &impl Executor) -> Result<Self, GridError> {
        let table = match mode {
            StencilMode::Table { budget } => Some(StencilTable::build(&grid, budget, exec)?),
            StencilMode::OnTheFly => None,
            StencilMode::Auto { budget } => match StencilTable::build(&grid, budget, exec) {
                Ok(table) => Some(table),
                Err(GridError::Budget { .. }) => None,
                Err(e) => return Err(e),
            },
        };
        Ok(Self { grid, table })
    }

    pub fn grid(&self) -> &SectorGrid {
        &self.grid
    }

    pub fn table(&self) -> Option<&StencilTable> {
        self.table.as_ref()
    }

    pub fn uses_table(&self) -> bool {
        self.table.is_some()
    }
}

impl Lattice for SectorLattice {
    fn config(&self) -> &GridConfig {
        self.grid.config()
    }

    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn spacing(&self) -> f64 {
        self.grid.config().spacing()
    }

    fn len(&self) -> usize {
        self.grid.len()
    }

    fn is_interior(&self, rank: usize) -> bool {
        self.grid.is_interior(rank)
    }

    fn index(&self, rank: usize) -> MultiIndex {
        self.grid.unrank(rank).expect("rank within grid")
    }

    fn rank_of(&self, index: &[i32]) -> Option<usize> {
        self.grid.rank(index).ok()
    }

    fn neighbors(&self, rank: usize, mask: usize) -> Option<StencilEntry> {
        if !self.grid.is_interior(rank) {
            return None;
        }
        match &self.table {
            Some(table) => Some(table.get(rank, mask)),
            None => Some(self.grid.resolve_unchecked(&self.index(rank), mask)),
        }
    }

    fn visit<F: FnMut(&NodeView<'_>)>(&self, range: Range<usize>, mut f: F) {
        if range.is_empty() {
            return;
        }
        let d = self.dim();
        let h = self.spacing();
        let dirs = self.direction_count();
        let mut idx = self.grid.unrank(range.start).expect("range within grid");
        let mut coords = [0.0; MAX_DIM];
        let mut scratch = [StencilEntry::default(); (1 << MAX_DIM) - 1];
        for rank in range {
            for k in 0..d {
                coords[k] = idx[k] as f64 * h;
            }
            let stencil = if !self.grid.is_interior(rank) {
                None
            } else if let Some(table) = &self.table {
                Some(table.node(rank))
            } else {
                for (slot, mask) in scratch[..dirs].iter_mut().zip(1..) {
                    *slot = self.grid.resolve_unchecked(&idx, mask);
                }
                Some(&scratch[..dirs])
            };
            f(&NodeView { rank, index: &idx, coords: &coords[..d], stencil });
            self.grid.advance(idx.as_mut_slice());
        }
    }
}

/// The full box `[-m, m]^d` plus its width-one Dirichlet layer, stored as
/// the cube `[-(m+1), m+1]^d` in row-major order (first coordinate slowest).
#[derive(Debug, Clone)]
pub struct FullGrid {
    config: GridConfig,
    strides: [usize; MAX_DIM],
    len: usize,
}

impl FullGrid {
    /// Largest dimension accepted; the node count grows like `(2m)^d`.
    pub const MAX_DIM: usize = 3;

    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        let d = config.dim();
        if d > Self::MAX_DIM {
            return Err(GridError::TooLarge { count: u64::MAX });
        }
        let side = 2 * config.m() as usize + 3;
        let len = (side as u64).checked_pow(d as u32).unwrap_or(u64::MAX);
        if len > crate::sector::MAX_NODES {
            return Err(GridError::TooLarge { count: len });
        }
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for k in (0..d).rev() {
            strides[k] = s;
            s *= side;
        }
        Ok(Self { config, strides, len: len as usize })
    }

    /// Node count of the full grid for `config`, without building it.
    pub fn count(config: &GridConfig) -> u64 {
        (2 * config.m() as u64 + 3).saturating_pow(config.dim() as u32)
    }

    fn offset(&self, mask: usize) -> usize {
        (0..self.dim()).filter(|k| mask >> k & 1 == 1).map(|k| self.strides[k]).sum()
    }

    fn index_is_interior(&self, idx: &[i32]) -> bool {
        let m = self.config.m() as i32;
        idx.iter().all(|c| c.abs() <= m)
    }
}

impl Lattice for FullGrid {
    fn config(&self) -> &GridConfig {
        &self.config
    }

    fn dim(&self) -> usize {
        self.config.dim()
    }

    fn spacing(&self) -> f64 {
        self.config.spacing()
    }

    fn len(&self) -> usize {
        self.len
    }

    fn is_interior(&self, rank: usize) -> bool {
        self.index_is_interior(&self.index(rank))
    }

    fn index(&self, rank: usize) -> MultiIndex {
        let d = self.dim();
        let shift = self.config.m() as i32 + 1;
        let mut out = MultiIndex::zeros(d);
        let mut rem = rank;
        for k in 0..d {
            out.as_mut_slice()[k] = (rem / self.strides[k]) as i32 - shift;
            rem %= self.strides[k];
        }
        out
    }

    fn rank_of(&self, index: &[i32]) -> Option<usize> {
        let shift = self.config.m() as i32 + 1;
        if index.len() != self.dim() || index.iter().any(|c| c.abs() > shift) {
            return None;
        }
        Some(index.iter().zip(&self.strides).map(|(&c, &s)| (c + shift) as usize * s).sum())
    }

    fn neighbors(&self, rank: usize, mask: usize) -> Option<StencilEntry> {
        if !self.is_interior(rank) {
            return None;
        }
        let off = self.offset(mask);
        Some(StencilEntry::new(rank + off, rank - off, false))
    }

    fn visit<F: FnMut(&NodeView<'_>)>(&self, range: Range<usize>, mut f: F) {
        if range.is_empty() {
            return;
        }
        let d = self.dim();
        let h = self.spacing();
        let dirs = self.direction_count();
        let shift = self.config.m() as i32 + 1;
        let mut offsets = [0usize; (1 << FullGrid::MAX_DIM) - 1];
        for (slot, mask) in offsets[..dirs].iter_mut().zip(1..) {
            *slot = self.offset(mask);
        }
        let mut idx = self.index(range.start);
        let mut coords = [0.0; MAX_DIM];
        let mut scratch = [StencilEntry::default(); (1 << FullGrid::MAX_DIM) - 1];
        for rank in range {
            for k in 0..d {
                coords[k] = idx[k] as f64 * h;
            }
            let stencil = if self.index_is_interior(&idx) {
                for (slot, &off) in scratch[..dirs].iter_mut().zip(&offsets[..dirs]) {
                    *slot = StencilEntry::new(rank + off, rank - off, false);
                }
                Some(&scratch[..dirs])
            } else {
                None
            };
            f(&NodeView { rank, index: &idx, coords: &coords[..d], stencil });
            // Row-major successor.
            for k in (0..d).rev() {
                if idx[k] < shift {
                    idx.as_mut_slice()[k] += 1;
                    break;
                }
                idx.as_mut_slice()[k] = -shift;
            }
        }
    }
}
