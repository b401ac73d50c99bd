//! The discrete operator `F(∇²_h w) = ½ max(0, max_v ∇²_h w(x, v))` and the
//! grid functions it acts on.

use alloc::vec::Vec;

use thiserror::Error;

use crate::exec::{Executor, NODE_CHUNK};
use crate::lattice::Lattice;
use crate::sector::StencilEntry;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("field has {got} values but the lattice has {expected} nodes")]
    Length { expected: usize, got: usize },
    #[error("value at rank {rank} is not finite")]
    NonFinite { rank: usize },
    #[error("rank {rank} is a Dirichlet node")]
    Boundary { rank: usize },
    #[error("rank {rank} out of range")]
    Rank { rank: usize },
    #[error("direction mask {mask} is not a nonzero binary vector of length {d}")]
    Direction { mask: usize, d: usize },
}

/// Right-hand side of the equation, evaluated at real coordinates.
pub trait Source: Sync {
    fn eval(&self, x: &[f64]) -> f64;
}

/// The max-regret payoff restricted to `x_n = 0`.
#[derive(Debug, Default, Clone, Copy)]
pub struct MaxPayoff;

impl Source for MaxPayoff {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        payoff(x)
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Source for F {
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// `max(x₁, …, x_d, 0)`: the appended expert has zero regret.
#[inline]
pub fn payoff(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc: f64, &c| acc.max(c))
}

/// `h² ∇²_h w` along one resolved direction.
#[inline]
pub(crate) fn second_difference(values: &[f64], center: f64, e: StencilEntry, h: f64) -> f64 {
    let correction = if e.correction() { h } else { 0.0 };
    values[e.plus()] + values[e.minus()] - correction - 2.0 * center
}

/// `F` at one node; the `0` seed is the `v = 0` direction.
#[inline]
pub(crate) fn operator_at(values: &[f64], center: f64, stencil: &[StencilEntry], h: f64, h2: f64) -> f64 {
    let mut best = 0.0f64;
    for &e in stencil {
        let num = second_difference(values, center, e, h);
        if num > best {
            best = num;
        }
    }
    0.5 * (best / h2)
}

/// One value per lattice node, in rank order.
#[derive(Debug, Clone)]
pub struct Field<L> {
    lattice: L,
    values: Vec<f64>,
}

impl<L: Lattice> Field<L> {
    pub fn new(lattice: L, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != lattice.len() {
            return Err(FieldError::Length { expected: lattice.len(), got: values.len() });
        }
        if let Some(rank) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { rank });
        }
        Ok(Self { lattice, values })
    }

    /// Samples `source` at every node.
    pub fn sample(lattice: L, source: &impl Source) -> Self {
        let mut values = Vec::with_capacity(lattice.len());
        lattice.visit(0..lattice.len(), |node| values.push(source.eval(node.coords)));
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &L {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_parts(self) -> (L, Vec<f64>) {
        (self.lattice, self.values)
    }

    /// Value at a lattice point, if the lattice stores it.
    pub fn value_at(&self, index: &[i32]) -> Option<f64> {
        self.lattice.rank_of(index).map(|r| self.values[r])
    }

    fn stencil(&self, rank: usize, mask: usize) -> Result<StencilEntry, FieldError> {
        let d = self.lattice.dim();
        if mask == 0 || mask >> d != 0 {
            return Err(FieldError::Direction { mask, d });
        }
        if rank >= self.values.len() {
            return Err(FieldError::Rank { rank });
        }
        self.lattice.neighbors(rank, mask).ok_or(FieldError::Boundary { rank })
    }

    /// `∇²_h w(x_r, v)`, with the lift correction on sector grids.
    pub fn discrete_hessian(&self, rank: usize, mask: usize) -> Result<f64, FieldError> {
        let e = self.stencil(rank, mask)?;
        let h = self.lattice.spacing();
        Ok(second_difference(&self.values, self.values[rank], e, h) / (h * h))
    }

    /// `½ max(0, max_v ∇²_h w(x_r, v))`.
    pub fn apply_operator(&self, rank: usize) -> Result<f64, FieldError> {
        let dirs = self.lattice.direction_count();
        let mut stencil = Vec::with_capacity(dirs);
        for mask in 1..=dirs {
            stencil.push(self.stencil(rank, mask)?);
        }
        let h = self.lattice.spacing();
        Ok(operator_at(&self.values, self.values[rank], &stencil, h, h * h))
    }

    /// `sup_r |w_r - F(∇²_h w)_r - g(x_r)|` over interior nodes.
    pub fn residual(&self, source: &impl Source, exec: &impl Executor) -> f64 {
        residual_of(&self.lattice, &self.values, source, exec)
    }
}

pub(crate) fn residual_of<L: Lattice>(lattice: &L, values: &[f64], source: &impl Source, exec: &impl Executor) -> f64 {
    let h = lattice.spacing();
    let h2 = h * h;
    exec.map_ranges(lattice.len(), NODE_CHUNK, |range| {
        let mut worst = 0.0f64;
        lattice.visit(range, |node| {
            if let Some(stencil) = node.stencil {
                let w = values[node.rank];
                let r = (w - operator_at(values, w, stencil, h, h2) - source.eval(node.coords)).abs();
                if !(r <= worst) {
                    worst = r;
                }
            }
        });
        worst
    })
    .into_iter()
    .fold(0.0, |acc, r| if r > acc || r.is_nan() { r } else { acc })
}
