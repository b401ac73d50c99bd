//! Parallel execution, snapshot persistence, reports and the command-line
//! driver around `expert-pde-core`.

pub mod cli;
pub mod manifest;
pub mod memory;
pub mod parallel;
pub mod report;
pub mod snapshot;

pub use parallel::Parallel;
pub use snapshot::{GridKind, Snapshot, SnapshotError, SnapshotHeader};
