//! Predicted treatments: linear projections of the treatment indicators on
//! the instruments, FWL residualization, and within-cell demeaning.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{Dataset, InstrumentDesign, Population, TreatmentCoding};
use crate::error::{Error, Result};
use crate::linalg::{self, COND_LIMIT};

/// Whether a projection was fitted on raw or within-cell demeaned variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Raw,
    Demeaned,
}

/// `P = a + Γ Z`, with `slopes = Γ` of shape `n × m`. For the demeaned basis
/// the intercepts are zero and `P̈ = Γ Z̈`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCoefficients {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<Vec<f64>>,
    pub basis: Basis,
}

impl ProjectionCoefficients {
    fn from_parts(intercepts: DVector<f64>, slopes: DMatrix<f64>, basis: Basis) -> Self {
        ProjectionCoefficients {
            intercepts: intercepts.iter().cloned().collect(),
            slopes: linalg::to_rows(&slopes),
            basis,
        }
    }

    pub fn n(&self) -> usize {
        self.intercepts.len()
    }

    pub fn slope_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.slopes)
    }

    /// `P(z)`.
    pub fn evaluate(&self, z: &[f64]) -> Vec<f64> {
        self.intercepts
            .iter()
            .zip(&self.slopes)
            .map(|(a, row)| a + row.iter().zip(z).map(|(g, v)| g * v).sum::<f64>())
            .collect()
    }

    /// `P` at every row of a `N × m` instrument matrix, as `N × n`.
    pub fn evaluate_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = z * self.slope_matrix().transpose();
        for i in 0..p.nrows() {
            for k in 0..p.ncols() {
                p[(i, k)] += self.intercepts[k];
            }
        }
        p
    }

    /// `P` at every design support point, as `J × n`.
    pub fn evaluate_design(&self, design: &InstrumentDesign) -> DMatrix<f64> {
        self.evaluate_matrix(&design.matrix())
    }
}

/// Exact moments of `(Z, D)` for a population.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    /// `J × m` support.
    pub z: DMatrix<f64>,
    /// `Pr[Z = z_j]`.
    pub probs: Vec<f64>,
    /// `E[D | Z = z_j]`, `J × n`.
    pub d_given_z: DMatrix<f64>,
    pub mean_z: DVector<f64>,
    pub mean_d: DVector<f64>,
    pub var_z: DMatrix<f64>,
    /// `Cov(Z, D)`, `m × n`.
    pub cov_zd: DMatrix<f64>,
}

impl PopulationMoments {
    pub fn new(pop: &Population) -> Self {
        let design = pop.design();
        let z = design.matrix();
        let probs = design.probs().to_vec();
        let d_given_z = pop.mean_indicators();
        let mean_z = linalg::weighted_means(&z, &probs);
        let mean_d = linalg::weighted_means(&d_given_z, &probs);
        let var_z = linalg::weighted_cov(&z, &z, &probs);
        let cov_zd = linalg::weighted_cov(&z, &d_given_z, &probs);
        PopulationMoments {
            z,
            probs,
            d_given_z,
            mean_z,
            mean_d,
            var_z,
            cov_zd,
        }
    }
}

/// Exact population projection `P = E[D] + Cov(D, Z) Var(Z)⁻¹ (Z − E[Z])`.
///
/// Solved as a probability-weighted least-squares problem on the support
/// with one round of refinement, which keeps `Cov(P, D − P)` at rounding
/// level even when `Var(Z)` is poorly conditioned.
pub fn fit_projection_population(pop: &Population) -> Result<ProjectionCoefficients> {
    let mom = PopulationMoments::new(pop);
    check_conditioning(&mom.var_z, "Var(Z)")?;
    let design = pop.design();
    let (j, m) = (design.len(), design.m());
    // Centre Z first so the intercept column is orthogonal to the slopes.
    let x = DMatrix::from_fn(j, m, |r, c| mom.probs[r].sqrt() * (mom.z[(r, c)] - mom.mean_z[c]));
    let y = DMatrix::from_fn(j, mom.d_given_z.ncols(), |r, c| {
        mom.probs[r].sqrt() * (mom.d_given_z[(r, c)] - mom.mean_d[c])
    });
    let mut b = linalg::least_squares(&x, &y, "first stage")?;
    let resid = &y - &x * &b;
    b += linalg::least_squares(&x, &resid, "first stage")?;
    let slopes = b.transpose();
    let intercepts = &mom.mean_d - &slopes * &mom.mean_z;
    Ok(ProjectionCoefficients::from_parts(intercepts, slopes, Basis::Raw))
}

/// Least-squares first stage `D = a + Γ Z` on a sample, honouring weights.
pub fn fit_projection_data(data: &Dataset, coding: &TreatmentCoding) -> Result<ProjectionCoefficients> {
    let d = data.treatment_matrix(coding)?;
    let z = data.z_matrix();
    let w = linalg::normalized_weights(data.weights(), data.len());
    let var_z = linalg::weighted_cov(&z, &z, &w);
    check_conditioning(&var_z, "Var(Z)")?;
    let n_obs = data.len();
    let m = data.m();
    let mut x = DMatrix::zeros(n_obs, m + 1);
    let mut yy = d.clone();
    for i in 0..n_obs {
        let s = w[i].sqrt();
        x[(i, 0)] = s;
        for j in 0..m {
            x[(i, j + 1)] = s * z[(i, j)];
        }
        for k in 0..d.ncols() {
            yy[(i, k)] *= s;
        }
    }
    let coef = linalg::least_squares(&x, &yy, "first stage")?;
    let intercepts = coef.row(0).transpose().into_owned();
    let slopes = coef.rows(1, m).transpose().into_owned();
    Ok(ProjectionCoefficients::from_parts(intercepts, slopes, Basis::Raw))
}

pub(crate) fn check_conditioning(a: &DMatrix<f64>, what: &str) -> Result<()> {
    let cond = linalg::condition_number(a);
    if !(cond < COND_LIMIT) {
        return Err(Error::Rank(format!(
            "{what} does not have full rank (condition number {cond:.3e})"
        )));
    }
    Ok(())
}

/// `P̃_k`: residual of `P_k` on the other predicted treatments and a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Residualized {
    pub index: usize,
    /// `P̃_k` at each point.
    pub values: DVector<f64>,
    /// Coefficients of `P_k` on the other `P_l`, in index order with `k` skipped.
    pub partial_coefs: Vec<f64>,
    pub intercept: f64,
    /// `Var(P̃_k)`.
    pub variance: f64,
}

/// Residualize column `k` of `p` (points × n) under point weights `w`
/// (summing to one).
pub fn fwl_residualize_values(p: &DMatrix<f64>, w: &[f64], k: usize) -> Result<Residualized> {
    let n = p.ncols();
    let others: Vec<usize> = (0..n).filter(|&l| l != k).collect();
    let pk = p.column(k).into_owned();
    let mean_k: f64 = pk.iter().zip(w).map(|(a, b)| a * b).sum();
    let var_k: f64 = pk.iter().zip(w).map(|(a, b)| b * (a - mean_k).powi(2)).sum();
    let (coefs, intercept, values) = if others.is_empty() {
        (Vec::new(), mean_k, pk.map(|v| v - mean_k))
    } else {
        let po = p.select_columns(&others);
        let vo = linalg::weighted_cov(&po, &po, w);
        let cok = linalg::weighted_cov(&po, &DMatrix::from_column_slice(p.nrows(), 1, pk.as_slice()), w);
        let c = linalg::solve_checked(&vo, &cok, "Var of the other predicted treatments")?;
        let mo = linalg::weighted_means(&po, w);
        let intercept = mean_k - (c.transpose() * &mo)[(0, 0)];
        let fitted = &po * &c;
        let values = DVector::from_fn(p.nrows(), |i, _| pk[i] - intercept - fitted[(i, 0)]);
        (c.iter().cloned().collect(), intercept, values)
    };
    let variance: f64 = values.iter().zip(w).map(|(v, b)| b * v * v).sum();
    if !(variance > 1e-12 * var_k.max(f64::MIN_POSITIVE)) || variance <= 0.0 {
        return Err(Error::Collinear { index: k });
    }
    Ok(Residualized {
        index: k,
        values,
        partial_coefs: coefs,
        intercept,
        variance,
    })
}

/// `P̃_k` on the design support.
pub fn fwl_residualize(
    coef: &ProjectionCoefficients,
    design: &InstrumentDesign,
    k: usize,
) -> Result<Residualized> {
    let p = coef.evaluate_design(design);
    fwl_residualize_values(&p, design.probs(), k)
}

/// Variables demeaned within covariate cells (saturated fixed effects).
#[derive(Debug, Clone)]
pub struct Demeaned {
    pub y: DVector<f64>,
    pub d: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Row weights, normalized to sum to one.
    pub w: Vec<f64>,
    /// Cell index per row (all zero without cells).
    pub cells: Vec<usize>,
    pub n_cells: usize,
}

/// Subtract cell means from `Y`, `D` and `Z`. Without cells this is plain
/// centering. Every cell needs at least two rows.
pub fn demean_within_cells(data: &Dataset, coding: &TreatmentCoding) -> Result<Demeaned> {
    let (cells, n_cells) = match data.cells() {
        Some(c) => (c.to_vec(), data.cell_labels().len()),
        None => (vec![0; data.len()], 1),
    };
    let sizes = {
        let mut s = vec![0usize; n_cells];
        for &c in &cells {
            s[c] += 1;
        }
        s
    };
    let bad: Vec<String> = sizes
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < 2)
        .map(|(c, _)| {
            if data.cells().is_some() {
                data.cell_labels()[c].clone()
            } else {
                "all".to_string()
            }
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::DegenerateCells(bad));
    }
    let w = linalg::normalized_weights(data.weights(), data.len());
    let y = demean_matrix(&data.y_matrix(), &cells, n_cells, &w);
    let d = demean_matrix(&data.treatment_matrix(coding)?, &cells, n_cells, &w);
    let z = demean_matrix(&data.z_matrix(), &cells, n_cells, &w);
    Ok(Demeaned {
        y: y.column(0).into_owned(),
        d,
        z,
        w,
        cells,
        n_cells,
    })
}

/// Weighted within-cell demeaning of every column.
pub fn demean_matrix(a: &DMatrix<f64>, cells: &[usize], n_cells: usize, w: &[f64]) -> DMatrix<f64> {
    let mut sums = DMatrix::<f64>::zeros(n_cells, a.ncols());
    let mut mass = vec![0.0; n_cells];
    for i in 0..a.nrows() {
        mass[cells[i]] += w[i];
        for j in 0..a.ncols() {
            sums[(cells[i], j)] += w[i] * a[(i, j)];
        }
    }
    let mut out = a.clone();
    for i in 0..a.nrows() {
        let c = cells[i];
        if mass[c] > 0.0 {
            for j in 0..a.ncols() {
                out[(i, j)] -= sums[(c, j)] / mass[c];
            }
        }
    }
    out
}

/// First stage on demeaned variables: `P̈ = Γ Z̈`. Returns the coefficients
/// and the fitted `P̈` (`N × n`).
pub fn fit_projection_demeaned(dm: &Demeaned) -> Result<(ProjectionCoefficients, DMatrix<f64>)> {
    let var_z = linalg::weighted_cross(&dm.z, &dm.z, &dm.w);
    check_conditioning(&var_z, "Var(Z̈)")?;
    let (xs, ys) = scale_rows(&dm.z, &dm.d, &dm.w);
    let b = linalg::least_squares(&xs, &ys, "first stage")?;
    let fitted = &dm.z * &b;
    let slopes = b.transpose();
    let coef = ProjectionCoefficients::from_parts(DVector::zeros(slopes.nrows()), slopes, Basis::Demeaned);
    Ok((coef, fitted))
}

/// Multiply each row of `x` and `y` by `sqrt(w_i)`.
pub(crate) fn scale_rows(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut xs = x.clone();
    let mut ys = y.clone();
    for i in 0..x.nrows() {
        let s = w[i].sqrt();
        for j in 0..x.ncols() {
            xs[(i, j)] *= s;
        }
        for j in 0..y.ncols() {
            ys[(i, j)] *= s;
        }
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::TypeComponent;

    fn worked_example() -> Population {
        // P_1 = 0.1 + 0.4 Z_1 and P_2 = 0.2 + 0.5 Z_2 on three equally likely points.
        let design =
            InstrumentDesign::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = |a: Vec<usize>, p: f64| TypeComponent::new(a, p, vec![0.0, 0.0], 0.0);
        Population::new(
            design,
            TreatmentCoding::unordered(3),
            vec![
                t(vec![0, 0, 0], 0.1),
                t(vec![1, 1, 1], 0.1),
                t(vec![2, 2, 2], 0.2),
                t(vec![0, 1, 0], 0.1),
                t(vec![0, 0, 2], 0.2),
                t(vec![0, 1, 2], 0.3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn worked_example_projection() {
        let c = fit_projection_population(&worked_example()).unwrap();
        assert!((c.intercepts[0] - 0.1).abs() < 1e-12);
        assert!((c.intercepts[1] - 0.2).abs() < 1e-12);
        assert!((c.slopes[0][0] - 0.4).abs() < 1e-12);
        assert!(c.slopes[0][1].abs() < 1e-12);
        assert!(c.slopes[1][0].abs() < 1e-12);
        assert!((c.slopes[1][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_of_a_deterministic_indicator_is_itself() {
        let design = InstrumentDesign::new(vec![vec![0.0], vec![1.0]], vec![0.3, 0.7]).unwrap();
        let pop = Population::new(
            design,
            TreatmentCoding::unordered(2),
            vec![TypeComponent::new(vec![0, 1], 1.0, vec![1.0], 0.0)],
        )
        .unwrap();
        let c = fit_projection_population(&pop).unwrap();
        assert!(c.intercepts[0].abs() < 1e-12);
        assert!((c.slopes[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_instrument_variance_is_assumption_two() {
        let design =
            InstrumentDesign::uniform(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let pop = Population::new(
            design,
            TreatmentCoding::unordered(2),
            vec![TypeComponent::new(vec![0, 1, 1], 1.0, vec![1.0], 0.0)],
        )
        .unwrap();
        let err = fit_projection_population(&pop).unwrap_err();
        assert!(err.to_string().starts_with("Assumption 2"));
    }

    #[test]
    fn residualized_is_orthogonal_to_others() {
        let pop = worked_example();
        let c = fit_projection_population(&pop).unwrap();
        let r = fwl_residualize(&c, pop.design(), 0).unwrap();
        let p = c.evaluate_design(pop.design());
        let w = pop.design().probs();
        let mean2: f64 = (0..3).map(|j| w[j] * p[(j, 1)]).sum();
        let cov: f64 = (0..3).map(|j| w[j] * r.values[j] * (p[(j, 1)] - mean2)).sum();
        assert!(cov.abs() < 1e-12);
        assert!(r.variance > 0.0);
        // Partial coefficient equals Cov(P1, P2) / Var(P2) = -0.4.
        assert!((r.partial_coefs[0] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_indicator_residual_is_centering() {
        let p = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.3]);
        let w = [0.2, 0.3, 0.5];
        let r = fwl_residualize_values(&p, &w, 0).unwrap();
        let mean = 0.02 + 0.15 + 0.15;
        for i in 0..3 {
            assert!((r.values[i] - (p[(i, 0)] - mean)).abs() < 1e-15);
        }
    }

    #[test]
    fn collinear_prediction_is_reported() {
        let p = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0]);
        let err = fwl_residualize_values(&p, &[1.0 / 3.0; 3], 1);
        assert!(err.is_err());
    }

    #[test]
    fn demeaning_zeroes_cell_means() {
        let data = Dataset::new(
            1,
            vec![1.0, 2.0, 5.0, 7.0],
            vec![0, 1, 0, 1],
            vec![0.0, 1.0, 0.0, 1.0],
        )
        .unwrap()
        .with_cells(vec!["a".into(), "a".into(), "b".into(), "b".into()])
        .unwrap();
        let dm = demean_within_cells(&data, &TreatmentCoding::unordered(2)).unwrap();
        assert!((dm.y[0] + 0.5).abs() < 1e-15);
        assert!((dm.y[2] + 1.0).abs() < 1e-15);
        let single = Dataset::new(1, vec![1.0, 2.0, 3.0], vec![0; 3], vec![0.0; 3])
            .unwrap()
            .with_cells(vec!["a".into(), "a".into(), "b".into()])
            .unwrap();
        assert!(matches!(
            demean_within_cells(&single, &TreatmentCoding::unordered(2)),
            Err(Error::DegenerateCells(c)) if c == vec!["b".to_string()]
        ));
    }
}
