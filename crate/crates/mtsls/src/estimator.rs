//! Multivariate 2SLS: exact population estimand and sample estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{Dataset, Population, TreatmentCoding};
use crate::error::{Error, Result};
use crate::linalg;
use crate::projection::{self, Basis, ProjectionCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub beta_hat: Vec<f64>,
    /// HC0 covariance; sample mode only.
    pub vcov: Option<Vec<Vec<f64>>>,
    pub first_stage: ProjectionCoefficients,
    pub n_obs: usize,
    pub mode: Mode,
    /// Cells dropped for having fewer than two rows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_cells: Vec<String>,
}

impl EstimationResult {
    /// Robust standard errors, if available.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.vcov
            .as_ref()
            .map(|v| (0..v.len()).map(|k| v[k][k].max(0.0).sqrt()).collect())
    }
}

/// Exact moments of `(P, Y)` on the design support.
pub(crate) struct PredictedMoments {
    /// `P` at each support point, `J × n`.
    pub p: DMatrix<f64>,
    pub var_p: DMatrix<f64>,
    pub first_stage: ProjectionCoefficients,
}

pub(crate) fn predicted_moments(pop: &Population) -> Result<PredictedMoments> {
    let first_stage = projection::fit_projection_population(pop)?;
    let p = first_stage.evaluate_design(pop.design());
    let mut var_p = linalg::weighted_cov(&p, &p, pop.design().probs());
    linalg::symmetrize(&mut var_p);
    projection::check_conditioning(&var_p, "Cov(Z, D)")?;
    Ok(PredictedMoments { p, var_p, first_stage })
}

/// `Var(P)⁻¹ Cov(P, Y)` from exact population moments.
pub fn tsls_population_estimand(pop: &Population) -> Result<Vec<f64>> {
    Ok(tsls_population(pop)?.beta_hat)
}

/// Population estimand wrapped as an [`EstimationResult`].
pub fn tsls_population(pop: &Population) -> Result<EstimationResult> {
    let pm = predicted_moments(pop)?;
    let y = pop.mean_outcome();
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let cov_py = linalg::weighted_cov(&pm.p, &y, pop.design().probs());
    let beta = linalg::solve_checked(&pm.var_p, &cov_py, "Var(P)")?;
    Ok(EstimationResult {
        beta_hat: beta.iter().cloned().collect(),
        vcov: None,
        first_stage: pm.first_stage,
        n_obs: 0,
        mode: Mode::Population,
        dropped_cells: Vec::new(),
    })
}

/// Sample 2SLS. With `fixed_effects`, the dataset's cells enter as saturated
/// fixed effects (within-cell demeaning); otherwise an intercept is used.
/// Weights, when present, are frequency weights.
pub fn tsls_estimate(data: &Dataset, coding: &TreatmentCoding, fixed_effects: bool) -> Result<EstimationResult> {
    data.check_treatments(coding)?;
    let (data, dropped) = if fixed_effects {
        if data.cells().is_none() {
            return Err(Error::InvalidData("fixed effects requested but no cell column".into()));
        }
        drop_small_cells(data)?
    } else {
        (data.without_cells(), Vec::new())
    };
    let n = coding.n();
    let m = data.m();
    let n_cells = if fixed_effects { data.cell_labels().len() } else { 1 };
    if data.len() <= m + n + n_cells {
        return Err(Error::InvalidData(format!(
            "{} observations is too few for {m} instruments, {n} treatments and {n_cells} cells",
            data.len()
        )));
    }
    let dm = projection::demean_within_cells(&data, coding)?;
    let (mut first_stage, p) = projection::fit_projection_demeaned(&dm)?;
    let var_p = linalg::weighted_cross(&p, &p, &dm.w);
    projection::check_conditioning(&var_p, "Cov(Z, D)")?;

    let y = DMatrix::from_column_slice(dm.y.len(), 1, dm.y.as_slice());
    let (ps, ys) = projection::scale_rows(&p, &y, &dm.w);
    let beta = linalg::least_squares(&ps, &ys, "second stage")?;
    let beta = beta.column(0).into_owned();

    let resid = &dm.y - &dm.d * &beta;
    let vcov = hc0(&p, &resid, &dm.w, effective_count(&data))?;

    if !fixed_effects {
        let w = &dm.w;
        let mean_d = linalg::weighted_means(&data.treatment_matrix(coding)?, w);
        let mean_z = linalg::weighted_means(&data.z_matrix(), w);
        let slopes = first_stage.slope_matrix();
        let a = mean_d - &slopes * mean_z;
        first_stage.intercepts = a.iter().cloned().collect();
        first_stage.basis = Basis::Raw;
    }

    Ok(EstimationResult {
        beta_hat: beta.iter().cloned().collect(),
        vcov: Some(linalg::to_rows(&vcov)),
        first_stage,
        n_obs: data.len(),
        mode: Mode::Sample,
        dropped_cells: dropped,
    })
}

/// Sum of frequency weights, or the row count when unweighted.
pub(crate) fn effective_count(data: &Dataset) -> f64 {
    match data.weights() {
        Some(w) => w.iter().sum(),
        None => data.len() as f64,
    }
}

/// HC0 sandwich for a regression on `x` with residuals `e`, normalized
/// weights `w` and effective sample size `count`.
pub(crate) fn hc0(x: &DMatrix<f64>, e: &DVector<f64>, w: &[f64], count: f64) -> Result<DMatrix<f64>> {
    let a = linalg::weighted_cross(x, x, w);
    let bread = linalg::inverse_checked(&a, "regressor cross-product")?;
    let mut xe = x.clone();
    for i in 0..x.nrows() {
        let s = (w[i]).sqrt() * e[i];
        for j in 0..x.ncols() {
            xe[(i, j)] *= s;
        }
    }
    let meat = xe.transpose() * xe;
    let mut v = &bread * meat * &bread / count;
    linalg::symmetrize(&mut v);
    Ok(v)
}

/// Drop cells with fewer than two rows; return the kept data and the labels
/// of the dropped cells.
pub(crate) fn drop_small_cells(data: &Dataset) -> Result<(Dataset, Vec<String>)> {
    let sizes = data.cell_sizes();
    let cells = data.cells().expect("cells present");
    let dropped: Vec<String> = sizes
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < 2)
        .map(|(c, _)| data.cell_labels()[c].clone())
        .collect();
    if dropped.is_empty() {
        return Ok((data.clone(), dropped));
    }
    let keep: Vec<bool> = cells.iter().map(|&c| sizes[c] >= 2).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::DegenerateCells(dropped));
    }
    Ok((data.subset(&keep)?, dropped))
}
