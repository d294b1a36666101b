//! Small dense linear-algebra helpers shared by the oracle, the estimator and
//! the tests. Everything solves through QR; no explicit inverses are formed
//! except for the HC0 bread, which is needed as a matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number ceiling above which a moment matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Ratio of largest to smallest singular value; `inf` for an exactly singular
/// or empty matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return f64::INFINITY;
    }
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve the square system `a x = b` after a conditioning check.
/// `what` names the matrix in the error message.
pub fn solve_checked(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(a);
    if !(cond < COND_LIMIT) {
        return Err(Error::Rank(format!(
            "{what} is singular or ill-conditioned (condition number {cond:.3e})"
        )));
    }
    a.clone()
        .qr()
        .solve(b)
        .ok_or_else(|| Error::Rank(format!("{what} is singular")))
}

/// Inverse of a well-conditioned square matrix, via QR.
pub fn inverse_checked(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(a.nrows(), a.ncols());
    solve_checked(a, &id, what)
}

/// Least-squares solution of `x b = y` for a tall `x` via Householder QR.
/// Fails when `x` is rank deficient by the diagonal-of-R criterion.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::Rank(format!(
            "{what}: {n} observations for {p} regressors"
        )));
    }
    if p == 0 {
        return Ok(DMatrix::zeros(0, y.ncols()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0_f64, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min <= max * 1e-10 {
        return Err(Error::Rank(format!("{what}: regressors are collinear")));
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, p).into_owned();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::Rank(format!("{what}: triangular solve failed")))
}

/// Normalized copy of nonnegative weights (sum 1). `None` means equal weights.
pub fn normalized_weights(w: Option<&[f64]>, n: usize) -> Vec<f64> {
    match w {
        Some(w) => {
            let total: f64 = w.iter().sum();
            w.iter().map(|v| v / total).collect()
        }
        None => vec![1.0 / n as f64; n],
    }
}

/// Weighted column means of `a` (rows are observations, weights sum to 1).
pub fn weighted_means(a: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(a.ncols());
    for j in 0..a.ncols() {
        let mut s = 0.0;
        for i in 0..a.nrows() {
            s += w[i] * a[(i, j)];
        }
        out[j] = s;
    }
    out
}

/// Subtract the weighted column means.
pub fn center(a: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mu = weighted_means(a, w);
    let mut out = a.clone();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[(i, j)] -= mu[j];
        }
    }
    out
}

/// Weighted cross-covariance `Cov(a, b)` with weights summing to 1.
pub fn weighted_cov(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let ac = center(a, w);
    let bc = center(b, w);
    weighted_cross(&ac, &bc, w)
}

/// `Σ_i w_i a_i b_iᵀ` for already-centered inputs.
pub fn weighted_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            scaled[(i, j)] *= w[i];
        }
    }
    scaled.transpose() * b
}

/// Symmetrize in place, removing rounding asymmetry.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Largest absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Row-major nested vectors, for serialization.
pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Build a matrix from row-major nested vectors of equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}
