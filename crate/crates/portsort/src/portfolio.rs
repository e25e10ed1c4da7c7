//! Per-period portfolio formation from estimated order statistics.
//!
//! Portfolios are quantile-spaced: for a single characteristic the J
//! breakpoints are the order statistics `z_(floor(n j / J))`, j = 1..J-1,
//! and cells are the resulting intervals. For d > 1 the cells are Cartesian
//! products of the marginal intervals, indexed in mixed radix with dimension
//! 0 varying fastest.
//!
//! Boundary convention: intervals are left-closed/right-open, with the first
//! interval open to -inf and the last closed up to +inf, so every value is
//! assigned and a value equal to a breakpoint joins the upper portfolio.
//! Tied values all follow the same rule; duplicate breakpoints leave the
//! intermediate cells structurally empty, which the nonempty flags record.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// A per-period partition of the characteristic space into `J^d` cells.
#[derive(Debug, Clone, Serialize)]
pub struct Partition {
    j: usize,
    d: usize,
    /// Per dimension, the J-1 interior breakpoints (nondecreasing).
    breakpoints: Vec<Vec<f64>>,
    /// Cell index of each observation, in `0..J^d`.
    cell_of: Vec<usize>,
    /// Observation count per cell, length `J^d`.
    counts: Vec<usize>,
    /// `nonempty[c] == (counts[c] >= 1)`.
    nonempty: Vec<bool>,
}

impl Partition {
    /// Portfolios per dimension.
    pub fn j(&self) -> usize {
        self.j
    }

    /// Characteristic dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Total number of cells, `J^d`.
    pub fn num_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn breakpoints(&self) -> &[Vec<f64>] {
        &self.breakpoints
    }

    pub fn cell_of(&self) -> &[usize] {
        &self.cell_of
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn nonempty(&self) -> &[bool] {
        &self.nonempty
    }

    /// Cell index containing an arbitrary point. Never out of support: the
    /// outer cells extend to +-inf.
    pub fn cell_of_point(&self, z: &[f64]) -> Result<usize> {
        if z.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "evaluation point",
                expected: self.d,
                actual: z.len(),
            });
        }
        let mut cell = 0usize;
        let mut stride = 1usize;
        for (k, &v) in z.iter().enumerate() {
            cell += marginal_bin(&self.breakpoints[k], v) * stride;
            stride *= self.j;
        }
        Ok(cell)
    }
}

/// Marginal bin of `v` (0-indexed): the number of breakpoints `<= v`.
fn marginal_bin(breakpoints: &[f64], v: f64) -> usize {
    breakpoints.partition_point(|&b| b <= v)
}

/// Interior breakpoints for one characteristic: the order statistics
/// `z_(floor(n j / J))` for j = 1..J-1 (1-indexed). `J = 1` yields an empty
/// vector.
pub fn marginal_breakpoints(values: &[f64], j: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if j == 0 {
        return Err(Error::InvalidPortfolioCount);
    }
    if j > n {
        return Err(Error::JTooLarge { j, n });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok((1..j).map(|k| sorted[n * k / j - 1]).collect())
}

/// Assigns every row of `z` (n x d) to a cell given per-dimension
/// breakpoints, and tallies counts and nonempty flags.
pub fn assign_cells(z: &DMatrix<f64>, breakpoints: &[Vec<f64>]) -> Result<Partition> {
    let (n, d) = (z.nrows(), z.ncols());
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if breakpoints.len() != d {
        return Err(Error::DimensionMismatch {
            context: "breakpoint dimensions",
            expected: d,
            actual: breakpoints.len(),
        });
    }
    let j = breakpoints[0].len() + 1;
    for b in breakpoints {
        if b.len() + 1 != j {
            return Err(Error::DimensionMismatch {
                context: "breakpoints per dimension",
                expected: j - 1,
                actual: b.len(),
            });
        }
    }
    let num_cells = j.pow(d as u32);
    let mut cell_of = Vec::with_capacity(n);
    let mut counts = vec![0usize; num_cells];
    for i in 0..n {
        let mut cell = 0usize;
        let mut stride = 1usize;
        for (k, b) in breakpoints.iter().enumerate() {
            cell += marginal_bin(b, z[(i, k)]) * stride;
            stride *= j;
        }
        counts[cell] += 1;
        cell_of.push(cell);
    }
    let nonempty = counts.iter().map(|&c| c >= 1).collect();
    Ok(Partition {
        j,
        d,
        breakpoints: breakpoints.to_vec(),
        cell_of,
        counts,
        nonempty,
    })
}

/// Convenience: breakpoints for every column of `z` at a common `J`, then
/// cell assignment.
pub fn partition_matrix(z: &DMatrix<f64>, j: usize) -> Result<Partition> {
    let mut breakpoints = Vec::with_capacity(z.ncols());
    for k in 0..z.ncols() {
        let col: Vec<f64> = z.column(k).iter().copied().collect();
        breakpoints.push(marginal_breakpoints(&col, j)?);
    }
    assign_cells(z, &breakpoints)
}
