//! Eigenvalues of the small truncated inverse, and the smallest eigenvalues
//! of `H` recovered as reciprocals of its largest eigenvalues.

use crate::error::{Error, Result};
use crate::inversion::TruncatedInverse;

/// Cyclic Jacobi sweeps stop once the off-diagonal Frobenius norm falls below
/// this fraction of the full norm.
pub const JACOBI_TOLERANCE: f64 = 1e-14;
pub const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// All eigenvalues of a real symmetric matrix, ascending, by cyclic Jacobi.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = matrix.len();
    if matrix.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if matrix[i][j] != matrix[j][i] {
                return Err(Error::InvalidInput(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut a = matrix.to_vec();
    let norm = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let target = JACOBI_TOLERANCE * norm;

    let mut sweeps = 0;
    while off_diagonal_norm(&a) > target {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for row in a.iter_mut() {
                    let (rp, rq) = (row[p], row[q]);
                    row[p] = c * rp - s * rq;
                    row[q] = s * rp + c * rq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Smallest eigenvalues of `H` from its truncated inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallestEigResult {
    /// `λ_1 ≤ λ_2 ≤ …`, the reciprocals of the largest block eigenvalues.
    pub lambda: Vec<f64>,
    /// `λ_i(k) − λ_i(k−1)`; zero when `k = 1`.
    pub trunc_err: Vec<f64>,
    /// All `k` block eigenvalues, descending.
    pub block_eigenvalues: Vec<f64>,
    pub k_used: usize,
}

fn reciprocals_of_largest(eig_ascending: &[f64], count: usize) -> Result<Vec<f64>> {
    eig_ascending
        .iter()
        .rev()
        .take(count)
        .map(|&mu| if mu > 0.0 { Ok(1.0 / mu) } else { Err(Error::NonPositiveBlockEigenvalue { value: mu }) })
        .collect()
}

/// The `s` smallest eigenvalues of `H`, with truncation errors from the
/// leading `(k−1)`-block. `s` is clamped to `k − 1` (or 1 when `k = 1`).
pub fn smallest_eigs_of_h(block: &TruncatedInverse, s: usize) -> Result<SmallestEigResult> {
    let k = block.k();
    if s == 0 {
        return Err(Error::InvalidInput("at least one eigenvalue must be requested".into()));
    }
    let s = if k == 1 { 1 } else { s.min(k - 1) };
    let mu = symmetric_eigen(&block.matrix())?;
    let lambda = reciprocals_of_largest(&mu, s)?;
    let trunc_err = if k == 1 {
        vec![0.0]
    } else {
        let nu = symmetric_eigen(&block.minus_one())?;
        let coarse = reciprocals_of_largest(&nu, s)?;
        lambda.iter().zip(&coarse).map(|(a, b)| a - b).collect()
    };
    Ok(SmallestEigResult { lambda, trunc_err, block_eigenvalues: mu.into_iter().rev().collect(), k_used: k })
}
