//! Transformed-outcome test.
//!
//! For an outcome set `B` and treatment `t`, regress `1[Y ∈ B]·1[T = t]` on
//! the predicted treatments. Write `1[T = t] = c_t + Σ_k M_tk D_k`. Under
//! proper weights the coefficient on `P_k` has the sign of `M_tk` and is zero
//! where `M_tk = 0`. With unordered coding this gives a non-negative diagonal
//! and zero off-diagonal; with ordered coding the dummies are differences of
//! consecutive indicators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{cell_index, fit_full_sample, p_name, Coefficient, Hypothesis, HypothesisForm, TestReport, MULTIPLICITY_NOTE};
use crate::design::{CodingKind, Dataset, TreatmentCoding};
use crate::error::{Error, Result};
use crate::estimator::effective_count;
use crate::linalg;
use crate::projection::demean_matrix;
use crate::regression::{ols_hc0, wald};

const SIGN_TOL: f64 = 1e-12;

/// Outcome sets `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bins {
    /// `[1,1]` and `[0,0]` for a binary outcome, deciles otherwise.
    Auto,
    /// Equal-mass bins from weighted quantiles.
    Quantiles(usize),
    Explicit(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KitagawaOptions {
    pub bins: Bins,
    pub fixed_effects: bool,
    pub alpha: f64,
}

impl Default for KitagawaOptions {
    fn default() -> Self {
        KitagawaOptions {
            bins: Bins::Auto,
            fixed_effects: false,
            alpha: super::DEFAULT_ALPHA,
        }
    }
}

fn is_binary(y: &[f64]) -> bool {
    y.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Weighted quantile bins with duplicate edges collapsed.
fn quantile_bins(y: &[f64], w: &[f64], count: usize) -> Result<Vec<(f64, f64)>> {
    if count == 0 {
        return Err(Error::InvalidInput("bin count must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let total: f64 = w.iter().sum();
    let quantile = |q: f64| {
        let target = q * total;
        let mut acc = 0.0;
        for &i in &order {
            acc += w[i];
            if acc >= target - 1e-12 * total && w[i] > 0.0 {
                return y[i];
            }
        }
        y[*order.last().expect("non-empty")]
    };
    let mut edges: Vec<f64> = (0..=count).map(|i| quantile(i as f64 / count as f64)).collect();
    edges[0] = y[order[0]];
    edges.dedup();
    if edges.len() == 1 {
        return Ok(vec![(edges[0], edges[0])]);
    }
    Ok(edges.windows(2).map(|e| (e[0], e[1])).collect())
}

/// `Σ_k M_tk D_k` as text, e.g. `D_1 − D_2`.
fn combination(row: &[f64]) -> String {
    let mut parts = Vec::new();
    for (k, &v) in row.iter().enumerate() {
        if v.abs() <= SIGN_TOL {
            continue;
        }
        let sign = if v < 0.0 { "−" } else { "+" };
        let mag = if (v.abs() - 1.0).abs() <= SIGN_TOL { String::new() } else { format!("{}", v.abs()) };
        parts.push((sign, format!("{mag}D_{}", k + 1)));
    }
    let mut s = String::new();
    for (i, (sign, term)) in parts.iter().enumerate() {
        if i == 0 {
            if *sign == "−" {
                s.push('−');
            }
        } else {
            s.push_str(&format!(" {sign} "));
        }
        s.push_str(term);
    }
    if parts.len() > 1 {
        format!("({s})")
    } else {
        s
    }
}

pub fn kitagawa_test(data: &Dataset, coding: &TreatmentCoding, opts: &KitagawaOptions) -> Result<TestReport> {
    let fit = fit_full_sample(data, coding, opts.fixed_effects)?;
    let data = &fit.data;
    let n = coding.n();
    let w = linalg::normalized_weights(data.weights(), data.len());
    let count = effective_count(data);
    let (cells, n_cells) = cell_index(data);
    let y = data.y();
    let binary = is_binary(y);
    let auto_binary = binary && opts.bins == Bins::Auto;
    let bins = match &opts.bins {
        Bins::Auto if binary => vec![(1.0, 1.0), (0.0, 0.0)],
        Bins::Auto => quantile_bins(y, &w, 10)?,
        Bins::Quantiles(q) => quantile_bins(y, &w, *q)?,
        Bins::Explicit(b) => b.clone(),
    };
    let (m_rows, _) = coding.reconstruction();
    let treatments: Vec<usize> = (1..coding.n_treatments()).collect();

    let mut report = TestReport::new("kitagawa", opts.alpha, data.len());
    report.dropped_cells = fit.dropped.clone();
    for (b, &(lo, hi)) in bins.iter().enumerate() {
        if lo > hi {
            return Err(Error::InvalidInput(format!("bin [{lo}, {hi}] is reversed")));
        }
        let inside: Vec<bool> = y.iter().map(|&v| v >= lo && v <= hi).collect();
        let mass: f64 = inside.iter().zip(&w).filter(|(i, _)| **i).map(|(_, w)| w).sum();
        // A binary outcome that never takes one value leaves that family
        // identically zero, which is a valid (trivial) regression.
        if mass <= 0.0 && !auto_binary {
            return Err(Error::EmptyBin { lo, hi });
        }
        let (family, prefix) = if auto_binary {
            if b == 0 {
                ("ϑ".to_string(), "Y·".to_string())
            } else {
                ("ψ".to_string(), "(1−Y)·".to_string())
            }
        } else {
            (format!("ϑ{}", b + 1), format!("1[{lo:.4} ≤ Y ≤ {hi:.4}]·"))
        };
        let mut dep = DMatrix::zeros(data.len(), treatments.len());
        for (e, &t) in treatments.iter().enumerate() {
            for i in 0..data.len() {
                if inside[i] && data.t()[i] == t {
                    dep[(i, e)] = 1.0;
                }
            }
        }
        let dep = demean_matrix(&dep, &cells, n_cells, &w);
        let ols = ols_hc0(&fit.p, &dep, &w, count)?;

        let mut zero_idx = Vec::new();
        let mut zero_names = Vec::new();
        for (e, &t) in treatments.iter().enumerate() {
            let equation = match coding.kind() {
                CodingKind::Unordered => format!("{prefix}D_{t}"),
                _ => format!("{prefix}{}", combination(&m_rows[t])),
            };
            for k in 0..n {
                let name = format!("{family}_{t}{}", k + 1);
                let est = ols.coef[(k, e)];
                let se = ols.se(e, k);
                report.coefficients.push(Coefficient {
                    name: name.clone(),
                    equation: equation.clone(),
                    regressor: p_name(k),
                    estimate: est,
                    std_error: se,
                });
                let mtk = m_rows[t][k];
                let form = if mtk > SIGN_TOL {
                    HypothesisForm::NonNegative
                } else if mtk < -SIGN_TOL {
                    HypothesisForm::NonPositive
                } else {
                    zero_idx.push(ols.index(e, k));
                    zero_names.push(name.clone());
                    HypothesisForm::Zero
                };
                report
                    .hypotheses
                    .push(Hypothesis::single(format!("{name} {}", form.symbol()), form, est, se, opts.alpha));
            }
        }
        if zero_idx.len() > 1 {
            let theta = DVector::from_column_slice(ols.coef.as_slice());
            let mut r = DMatrix::zeros(zero_idx.len(), theta.len());
            for (row, &i) in zero_idx.iter().enumerate() {
                r[(row, i)] = 1.0;
            }
            let (stat, df, p) = wald(&theta, &ols.vcov, &r)?;
            report.hypotheses.push(Hypothesis::joint(
                format!("{} = 0 (joint)", zero_names.join(" = ")),
                stat,
                df,
                p,
                opts.alpha,
            ));
        }
    }
    report.notes.push(MULTIPLICITY_NOTE.to_string());
    if coding.kind() != CodingKind::Unordered {
        report.notes.push(
            "dependent variables are 1[Y in B]·1[T = t]; sign restrictions come from writing 1[T = t] in the indicators"
                .to_string(),
        );
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_bins_cover_the_range() {
        let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let w = vec![0.01; 100];
        let b = quantile_bins(&y, &w, 4).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0].0, 0.0);
        assert_eq!(b[3].1, 99.0);
    }

    #[test]
    fn combinations_read_naturally() {
        assert_eq!(combination(&[1.0, -1.0]), "(D_1 − D_2)");
        assert_eq!(combination(&[0.0, 1.0]), "D_2");
    }
}
