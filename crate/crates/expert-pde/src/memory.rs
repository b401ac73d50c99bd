//! Up-front memory model for a solve.
//!
//! The solver holds two value buffers (current and next iterate), the
//! binomial table behind rank/unrank, and optionally the stencil table.
//! Nothing else scales with the grid.

use expert_pde_core::sector::{GridError, StencilEntry};
use expert_pde_core::{grid_count, FullGrid, GridConfig};
use serde::Serialize;

use crate::snapshot::GridKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    pub nodes: u64,
    pub interior_nodes: u64,
    pub directions: u64,
    /// Current and next iterate.
    pub value_bytes: u64,
    /// Size of the precomputed stencil table, whether or not it is used.
    pub stencil_table_bytes: u64,
    pub rank_table_bytes: u64,
    pub uses_table: bool,
    pub total_bytes: u64,
}

/// Estimate for `config` when tables up to `budget` bytes are allowed.
pub fn estimate(kind: GridKind, config: &GridConfig, budget: u64) -> Result<MemoryEstimate, GridError> {
    let d = config.dim() as u64;
    let m = config.m() as u64;
    let directions = (1u64 << d) - 1;
    let overflow = || GridError::Overflow { d: d as usize, m };
    match kind {
        GridKind::Sector => {
            let nodes = grid_count(d as usize, m)?;
            let interior_nodes = grid_count(d as usize, m - 1)?;
            let value_bytes = nodes.checked_mul(16).ok_or_else(overflow)?;
            let stencil_table_bytes = interior_nodes
                .checked_mul(directions)
                .and_then(|e| e.checked_mul(std::mem::size_of::<StencilEntry>() as u64))
                .ok_or_else(overflow)?;
            let rank_table_bytes = (d + 1) * (m + d + 1) * 8;
            let uses_table = stencil_table_bytes <= budget;
            let total_bytes = value_bytes + rank_table_bytes + if uses_table { stencil_table_bytes } else { 0 };
            Ok(MemoryEstimate {
                nodes,
                interior_nodes,
                directions,
                value_bytes,
                stencil_table_bytes,
                rank_table_bytes,
                uses_table,
                total_bytes,
            })
        }
        GridKind::Full => {
            let nodes = FullGrid::count(config);
            let side = 2 * m + 1;
            let interior_nodes = side.checked_pow(d as u32).ok_or_else(overflow)?;
            let value_bytes = nodes.checked_mul(16).ok_or_else(overflow)?;
            Ok(MemoryEstimate {
                nodes,
                interior_nodes,
                directions,
                value_bytes,
                stencil_table_bytes: 0,
                rank_table_bytes: 0,
                uses_table: false,
                total_bytes: value_bytes,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_experts_at_fine_resolution() {
        let c = GridConfig::new(5, 200, 0.025).unwrap();
        let e = estimate(GridKind::Sector, &c, u64::MAX).unwrap();
        assert_eq!(e.nodes, 70_058_751);
        assert_eq!(e.directions, 15);
        assert_eq!(e.stencil_table_bytes, grid_count(4, 199).unwrap() * 15 * 8);
        assert!(e.uses_table);
        let e = estimate(GridKind::Sector, &c, 1 << 30).unwrap();
        assert!(!e.uses_table);
        assert_eq!(e.total_bytes, e.value_bytes + e.rank_table_bytes);
    }
}
