//! Weights with a discrete covariate and saturated fixed effects.
//!
//! The first stage is common across cells: `P̈ = Γ Z̈` with `Z̈ = Z − E[Z|X]`.
//! Weights are `w^{s,x} = Var(P̈)⁻¹ Cov(P̈, v_s(Z) | X = x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{WeightMatrix, VERDICT_TOL};
use crate::design::CellPopulation;
use crate::error::{Error, Result};
use crate::linalg;
use crate::projection::PopulationMoments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAnalysis {
    pub label: String,
    pub prob: f64,
    /// `Var(P̈ | X = x)`.
    pub var_p: Vec<Vec<f64>>,
    /// `a_x = tr Var(P̈|x) / tr Var(P̈)`.
    pub scale: f64,
    /// `max |Var(P̈|x) − a_x Var(P̈)| / max |Var(P̈)|`.
    pub deviation: f64,
    pub proportional: bool,
    /// `C_x = Var(P̈)⁻¹ Var(P̈|x)`, when `Var(P̈)` is invertible.
    pub contamination: Option<Vec<Vec<f64>>>,
    /// `C_x[l][k] / C_x[k][k]`: weight on a cell-`x` complier's `β_k` inside
    /// `β_l` relative to its weight inside `β_k`. Diagonal entries are 1.
    pub ratios: Option<Vec<Vec<f64>>>,
    /// `w^{s,x}` for each type of the cell, when `Var(P̈)` is invertible.
    pub weights: Option<Vec<WeightMatrix>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateAnalysis {
    /// `Γ`, `n × m`; minimum-norm when `Var(Z̈)` is singular.
    pub gamma: Vec<Vec<f64>>,
    /// Pooled `Var(P̈) = Σ_x Pr[x] Var(P̈|x)`.
    pub var_p: Vec<Vec<f64>>,
    pub cells: Vec<CellAnalysis>,
    /// Every cell is proportional with `a_x > 0`.
    pub covary_similarly: bool,
    /// `Var(P̈)` is invertible, so 2SLS and the weights exist.
    pub rank_ok: bool,
    /// `Var(P̈)⁻¹ Cov(P̈, Ÿ)` from outcome moments.
    pub estimand: Option<Vec<f64>>,
    /// `max |Σ_{x,s} Pr[x] Pr[s|x] w^{s,x} β^{s,x} − estimand|`.
    pub lemma_gap: Option<f64>,
    /// `max |Σ_{x,s} Pr[x] Pr[s|x] w^{s,x} − I|`.
    pub mixture_gap: Option<f64>,
}

pub fn covariate_weight_analysis(pop: &CellPopulation) -> Result<CovariateAnalysis> {
    let n = pop.coding().n();
    let m = pop.m();
    let moments: Vec<PopulationMoments> = (0..pop.cells().len())
        .map(|x| PopulationMoments::new(pop.population(x)))
        .collect();
    let mut var_z = DMatrix::zeros(m, m);
    let mut cov_zd = DMatrix::zeros(m, n);
    for (c, mom) in pop.cells().iter().zip(&moments) {
        var_z += &mom.var_z * c.prob;
        cov_zd += &mom.cov_zd * c.prob;
    }
    linalg::symmetrize(&mut var_z);
    // With collinear instruments Γ is not unique but the fitted P̈ is, so
    // fall back to the minimum-norm solution.
    let gamma = if linalg::condition_number(&var_z) < linalg::COND_LIMIT {
        linalg::solve_checked(&var_z, &cov_zd, "Var(Z̈)")?
    } else {
        let scale = linalg::max_abs(&var_z).max(f64::MIN_POSITIVE);
        let pinv = var_z
            .clone()
            .pseudo_inverse(1e-12 * scale)
            .map_err(|e| Error::Rank(format!("Var(Z̈): {e}")))?;
        pinv * &cov_zd
    }
    .transpose();

    // Demeaned predicted treatments on each cell's support.
    let p_cells: Vec<DMatrix<f64>> = moments
        .iter()
        .map(|mom| {
            let zc = linalg::center(&mom.z, &mom.probs);
            zc * gamma.transpose()
        })
        .collect();
    let var_cells: Vec<DMatrix<f64>> = p_cells
        .iter()
        .zip(&moments)
        .map(|(p, mom)| {
            let mut v = linalg::weighted_cross(p, p, &mom.probs);
            linalg::symmetrize(&mut v);
            v
        })
        .collect();
    let mut var_p = DMatrix::zeros(n, n);
    for (c, v) in pop.cells().iter().zip(&var_cells) {
        var_p += v * c.prob;
    }
    linalg::symmetrize(&mut var_p);
    let trace = var_p.trace();
    let scale_ref = linalg::max_abs(&var_p);
    let rank_ok = linalg::condition_number(&var_p) < linalg::COND_LIMIT;

    let mut cells = Vec::new();
    let mut mixture = DMatrix::zeros(n, n);
    let mut weighted = DVector::zeros(n);
    let mut cov_py = DMatrix::zeros(n, 1);
    for (x, c) in pop.cells().iter().enumerate() {
        let sub = pop.population(x);
        let mom = &moments[x];
        let p = &p_cells[x];
        let v = &var_cells[x];
        let a = if trace > 0.0 { v.trace() / trace } else { 0.0 };
        let deviation = if scale_ref > 0.0 {
            linalg::max_abs(&(v - &var_p * a)) / scale_ref
        } else {
            0.0
        };
        let proportional = a > 0.0 && deviation <= VERDICT_TOL;

        let y = sub.mean_outcome();
        let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        cov_py += linalg::weighted_cov(p, &y, &mom.probs) * c.prob;

        let (contamination, ratios, weights) = if rank_ok {
            let cm = linalg::solve_checked(&var_p, v, "Var(P̈)")?;
            let ratios = (0..n)
                .map(|l| (0..n).map(|k| cm[(l, k)] / cm[(k, k)]).collect())
                .collect();
            let mut ws = Vec::new();
            for (i, t) in sub.types().iter().enumerate() {
                let path = sub.indicator_matrix(i);
                let cov = linalg::weighted_cov(p, &path, &mom.probs);
                let w = linalg::solve_checked(&var_p, &cov, "Var(P̈)")?;
                mixture += &w * (c.prob * t.prob);
                weighted += &w * DVector::from_column_slice(&t.beta) * (c.prob * t.prob);
                ws.push(WeightMatrix {
                    type_index: i,
                    assignment: t.assignment.clone(),
                    w: linalg::to_rows(&w),
                    route_gap: 0.0,
                });
            }
            (Some(linalg::to_rows(&cm)), Some(ratios), Some(ws))
        } else {
            (None, None, None)
        };
        cells.push(CellAnalysis {
            label: c.label.clone(),
            prob: c.prob,
            var_p: linalg::to_rows(v),
            scale: a,
            deviation,
            proportional,
            contamination,
            ratios,
            weights,
        });
    }

    let (estimand, lemma_gap, mixture_gap) = if rank_ok {
        let b = linalg::solve_checked(&var_p, &cov_py, "Var(P̈)")?;
        let est: Vec<f64> = b.iter().cloned().collect();
        let lemma = est
            .iter()
            .zip(weighted.iter())
            .fold(0.0_f64, |acc, (e, w)| acc.max((e - w).abs()));
        let mix = linalg::max_abs(&(mixture - DMatrix::identity(n, n)));
        (Some(est), Some(lemma), Some(mix))
    } else {
        (None, None, None)
    };

    Ok(CovariateAnalysis {
        gamma: linalg::to_rows(&gamma),
        var_p: linalg::to_rows(&var_p),
        covary_similarly: cells.iter().all(|c| c.proportional),
        cells,
        rank_ok,
        estimand,
        lemma_gap,
        mixture_gap,
    })
}
