//! Weighted least squares with several dependent variables, stacked HC0
//! covariance, and the p-values used by the specification tests.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};
use crate::linalg;

/// OLS of every column of `y` on the columns of `x`.
#[derive(Debug, Clone)]
pub struct MultiOls {
    /// `p × q`: column `e` holds equation `e`'s coefficients.
    pub coef: DMatrix<f64>,
    /// `pq × pq`, equation-major: index `e * p + j`.
    pub vcov: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    /// Weighted residual sum of squares per equation (weights sum to one).
    pub rss: Vec<f64>,
}

impl MultiOls {
    pub fn p(&self) -> usize {
        self.coef.nrows()
    }

    pub fn index(&self, equation: usize, regressor: usize) -> usize {
        equation * self.p() + regressor
    }

    pub fn se(&self, equation: usize, regressor: usize) -> f64 {
        let i = self.index(equation, regressor);
        self.vcov[(i, i)].max(0.0).sqrt()
    }
}

/// Fit with normalized row weights `w` and effective sample size `count`.
pub fn ols_hc0(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64], count: f64) -> Result<MultiOls> {
    let (p, q) = (x.ncols(), y.ncols());
    let (xs, ys) = crate::projection::scale_rows(x, y, w);
    let coef = linalg::least_squares(&xs, &ys, "test regression")?;
    let residuals = y - x * &coef;
    let a = linalg::weighted_cross(x, x, w);
    let bread = linalg::inverse_checked(&a, "test regressors")?;
    let mut meat = DMatrix::zeros(p * q, p * q);
    let mut g = DVector::zeros(p * q);
    for i in 0..x.nrows() {
        if w[i] == 0.0 {
            continue;
        }
        for e in 0..q {
            for j in 0..p {
                g[e * p + j] = x[(i, j)] * residuals[(i, e)];
            }
        }
        meat.ger(w[i], &g, &g, 1.0);
    }
    let mut big_bread = DMatrix::zeros(p * q, p * q);
    for e in 0..q {
        big_bread.view_mut((e * p, e * p), (p, p)).copy_from(&bread);
    }
    let mut vcov = &big_bread * meat * &big_bread / count;
    linalg::symmetrize(&mut vcov);
    let rss = (0..q)
        .map(|e| (0..x.nrows()).map(|i| w[i] * residuals[(i, e)].powi(2)).sum())
        .collect();
    Ok(MultiOls {
        coef,
        vcov,
        residuals,
        rss,
    })
}

/// Add a column of ones in front.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Two-sided p-value for `H0: θ = 0`.
pub fn p_two_sided(est: f64, se: f64) -> f64 {
    if se > 0.0 && se.is_finite() {
        2.0 * (1.0 - std_normal().cdf((est / se).abs()))
    } else if est.abs() <= 1e-12 {
        1.0
    } else {
        0.0
    }
}

/// One-sided p-value for `H0: θ ≥ 0` (small when `θ̂` is very negative).
pub fn p_nonnegative(est: f64, se: f64) -> f64 {
    if se > 0.0 && se.is_finite() {
        std_normal().cdf(est / se)
    } else if est >= -1e-12 {
        1.0
    } else {
        0.0
    }
}

/// One-sided p-value for `H0: θ ≤ 0`.
pub fn p_nonpositive(est: f64, se: f64) -> f64 {
    p_nonnegative(-est, se)
}

/// Wald test of `R θ = 0`. Returns `(statistic, df, p)`. A singular
/// restriction covariance is inverted on its range.
pub fn wald(theta: &DVector<f64>, vcov: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(f64, usize, f64)> {
    if r.ncols() != theta.len() {
        return Err(Error::Shape("restriction matrix does not match coefficients".into()));
    }
    let df = r.nrows();
    if df == 0 {
        return Ok((0.0, 0, 1.0));
    }
    let rt = r * theta;
    let v = r * vcov * r.transpose();
    let scale = linalg::max_abs(&v);
    let stat = if scale > 0.0 {
        let pinv = v
            .clone()
            .pseudo_inverse(1e-12 * scale)
            .map_err(|e| Error::InsufficientVariation(e.to_string()))?;
        (rt.transpose() * pinv * &rt)[(0, 0)].max(0.0)
    } else if rt.amax() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    let p = if stat.is_infinite() {
        0.0
    } else {
        1.0 - ChiSquared::new(df as f64).expect("df ≥ 1").cdf(stat)
    };
    Ok((stat, df, p))
}

/// Upper-tail probability of `F(d1, d2)` at `f`.
pub fn f_pvalue(f: f64, d1: f64, d2: f64) -> f64 {
    if !(f > 0.0) {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    1.0 - FisherSnedecor::new(d1, d2).expect("positive df").cdf(f)
}
