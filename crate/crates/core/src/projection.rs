//! Euclidean projection onto the per-resource capacity constraints.
//!
//! The feasible set couples coordinates only within a capacity group: the
//! bandwidth fractions of all slices on one edge, or the CPU fractions of all
//! slices on one core. Each group is the capped simplex `{x >= 0, sum x <= 1}`,
//! so projecting the whole allocation matrix is exactly one independent
//! capped-simplex projection per column.

use std::cmp::Ordering;

use crate::domain::{AllocationMatrix, AllocationVector};
use crate::error::{Error, Result};

/// Projects `y` onto `{x : x >= 0, sum(x) <= 1}`.
///
/// Clipping negatives is already optimal when the clipped sum fits the
/// budget; otherwise the sum constraint is active and the answer is the
/// projection onto the unit simplex, found with the sort-based threshold.
pub fn project_capped_simplex(y: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    let theta = simplex_threshold(y);
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Threshold `theta` such that `max(y - theta, 0)` sums to one.
fn simplex_threshold(y: &[f64]) -> f64 {
    let mut u = y.to_vec();
    u.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta
}

/// Shape of the capacity constraints: one group per edge and per core, each
/// collecting that coordinate across every slice, each with budget 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    pub n_edges: usize,
    pub n_cores: usize,
}

impl ConstraintSet {
    pub fn new(n_edges: usize, n_cores: usize) -> Self {
        ConstraintSet { n_edges, n_cores }
    }

    pub fn dim(&self) -> usize {
        self.n_edges + self.n_cores
    }
}

/// Projects every capacity group of `alloc` independently.
pub fn project_constraint_set(
    alloc: &AllocationMatrix,
    constraints: &ConstraintSet,
) -> Result<AllocationMatrix> {
    let dim = constraints.dim();
    for (_, v) in alloc.iter() {
        if v.flows.len() != constraints.n_edges || v.cpu.len() != constraints.n_cores {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
    }
    let ids: Vec<_> = alloc.ids().collect();
    let mut rows: Vec<Vec<f64>> = alloc.iter().map(|(_, v)| v.coords()).collect();
    for d in 0..dim {
        let column: Vec<f64> = rows.iter().map(|r| r[d]).collect();
        for (r, x) in rows.iter_mut().zip(project_capped_simplex(&column)) {
            r[d] = x;
        }
    }
    Ok(ids
        .into_iter()
        .zip(rows)
        .map(|(id, r)| (id, AllocationVector::from_coords(constraints.n_edges, &r)))
        .collect())
}
