//! Solver for the degenerate elliptic equation governing adversarial
//! prediction with expert advice,
//!
//! ```text
//! u - ½ max_{v ∈ {0,1}^n} vᵀ ∇²u v = max(x₁, …, xₙ),
//! ```
//!
//! discretized with a monotone wide-stencil scheme. The translation identity
//! `u(x + s𝟙) = u(x) + s` removes one dimension and permutation invariance
//! restricts the unknowns to the positive ordered sector
//! `i₁ ≥ i₂ ≥ … ≥ i_d ≥ 0`, which is indexed here with the combinatorial
//! number system.
//!
//! The crate is `no_std` (it needs `alloc`). Parallelism and IO live in the
//! companion `expert-pde` crate, which plugs a thread pool in through
//! [`exec::Executor`].

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod closed_form;
pub mod exec;
pub mod lattice;
pub mod operator;
pub mod sector;
pub mod solver;

pub use exec::{Executor, Serial};
pub use lattice::{FullGrid, Lattice, NodeView, SectorLattice, StencilMode};
pub use operator::{payoff, Field, MaxPayoff, Source};
pub use sector::{grid_count, GridConfig, MultiIndex, SectorGrid, StencilEntry, StencilTable};
pub use solver::{solve, solve_full, solve_sector, SolveError, SolveOptions, Solved};

/// Largest number of experts supported; the reduced dimension is one less.
pub const MAX_EXPERTS: usize = 12;

/// Largest reduced dimension `d = n - 1`.
pub const MAX_DIM: usize = MAX_EXPERTS - 1;
