//! Dense direct solves for tiny grids, used as a reference by `verify`.

use nalgebra::{DMatrix, DVector};

use super::operator::DiscreteOperator;
use crate::error::{HomError, Result};

/// Largest grid (in cells) accepted by the dense reference.
pub const DENSE_LIMIT: usize = 4096;

/// Mean-zero solution of `op x = b` from an LU factorization of the bordered
/// system `[[A, 1], [1^T, 0]]`.
pub fn solve_mean_zero(op: &DiscreteOperator, b: &[f64]) -> Result<Vec<f64>> {
    let n = op.n();
    if n > DENSE_LIMIT {
        return Err(HomError::InvalidArgument(format!("dense reference limited to {DENSE_LIMIT} cells, got {n}")));
    }
    let a = op.dense();
    let m = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => a[i][j],
        (false, false) => 0.0,
        _ => 1.0,
    });
    let mut rhs = DVector::zeros(n + 1);
    let bm = b.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        rhs[i] = b[i] - bm;
    }
    let x = m.lu().solve(&rhs).ok_or_else(|| HomError::InvalidArgument("bordered system is singular".into()))?;
    Ok(x.iter().take(n).copied().collect())
}
