//! First stage within a pre-determined subsample.
//!
//! Predicted treatments come from the full-sample first stage. Within the
//! flagged rows, `D_l` is regressed on `P` (or on `Z` in just-identified
//! designs). Under proper weights, and a flag that does not depend on the
//! instrument, `η_ll ≥ 0` and `η_lk = 0` for `l ≠ k`, where `η_lk` is the
//! coefficient on the `k`th regressor in the equation for `D_l`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fit_full_sample, Coefficient, Decision, Hypothesis, HypothesisForm, TestReport, MULTIPLICITY_NOTE};
use crate::design::{Dataset, TreatmentCoding};
use crate::error::{Error, Result};
use crate::projection::demean_matrix;
use crate::regression::{ols_hc0, wald};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleOptions {
    pub flag: String,
    /// Rows where the flag equals this value form the subsample.
    pub value: bool,
    /// Regress on `Z` instead of `P` (requires `m = n`).
    pub use_z: bool,
    pub fixed_effects: bool,
    /// Defaults to `m + n + 10`.
    pub min_size: Option<usize>,
    pub alpha: f64,
}

impl SubsampleOptions {
    pub fn new(flag: &str) -> Self {
        SubsampleOptions {
            flag: flag.to_string(),
            value: true,
            use_z: false,
            fixed_effects: false,
            min_size: None,
            alpha: super::DEFAULT_ALPHA,
        }
    }
}

pub fn subsample_first_stage_test(
    data: &Dataset,
    coding: &TreatmentCoding,
    opts: &SubsampleOptions,
) -> Result<TestReport> {
    let n = coding.n();
    let m = data.m();
    if opts.use_z && m != n {
        return Err(Error::Shape(format!(
            "regressing on Z needs as many instruments as indicators (m = {m}, n = {n})"
        )));
    }
    let fit = fit_full_sample(data, coding, opts.fixed_effects)?;
    let full = &fit.data;
    let flag = full
        .flag(&opts.flag)
        .ok_or_else(|| Error::InvalidData(format!("flag column {:?} not found", opts.flag)))?;
    let rows: Vec<usize> = (0..full.len()).filter(|&i| flag[i] == opts.value).collect();
    let min = opts.min_size.unwrap_or(m + n + 10);
    if rows.len() < min {
        return Err(Error::SubsampleTooSmall { size: rows.len(), min });
    }

    let raw_w: Vec<f64> = match full.weights() {
        Some(w) => rows.iter().map(|&i| w[i]).collect(),
        None => vec![1.0; rows.len()],
    };
    let count: f64 = raw_w.iter().sum();
    if count <= 0.0 {
        return Err(Error::SubsampleTooSmall { size: 0, min });
    }
    let w: Vec<f64> = raw_w.iter().map(|v| v / count).collect();
    let (cells, n_cells) = match full.cells() {
        Some(c) => (rows.iter().map(|&i| c[i]).collect::<Vec<_>>(), full.cell_labels().len()),
        None => (vec![0; rows.len()], 1),
    };
    let source = if opts.use_z { &fit.z } else { &fit.p };
    let x = demean_matrix(&source.select_rows(&rows), &cells, n_cells, &w);
    let d = demean_matrix(&fit.d.select_rows(&rows), &cells, n_cells, &w);
    let ols = ols_hc0(&x, &d, &w, count)?;

    let reg = if opts.use_z { "Z" } else { "P" };
    let mut report = TestReport::new(
        if opts.use_z { "subsample first stage (Z)" } else { "subsample first stage" },
        opts.alpha,
        rows.len(),
    );
    report.dropped_cells = fit.dropped.clone();
    let mut off = Vec::new();
    let mut diag_reject = false;
    for l in 0..n {
        for k in 0..n {
            let name = format!("η_{}{}", l + 1, k + 1);
            let est = ols.coef[(k, l)];
            let se = ols.se(l, k);
            report.coefficients.push(Coefficient {
                name: name.clone(),
                equation: format!("D_{}", l + 1),
                regressor: format!("{reg}_{}", k + 1),
                estimate: est,
                std_error: se,
            });
            let form = if l == k { HypothesisForm::NonNegative } else { HypothesisForm::Zero };
            let h = Hypothesis::single(format!("{name} {}", form.symbol()), form, est, se, opts.alpha);
            if l == k {
                diag_reject |= h.reject;
            } else {
                off.push(ols.index(l, k));
            }
            report.hypotheses.push(h);
        }
    }
    let mut joint_reject = false;
    if !off.is_empty() {
        let theta = DVector::from_column_slice(ols.coef.as_slice());
        let mut r = DMatrix::zeros(off.len(), theta.len());
        for (row, &i) in off.iter().enumerate() {
            r[(row, i)] = 1.0;
        }
        let (stat, df, p) = wald(&theta, &ols.vcov, &r)?;
        let h = Hypothesis::joint("off-diagonal η = 0 (joint)".to_string(), stat, df, p, opts.alpha);
        joint_reject = h.reject;
        report.hypotheses.push(h);
    }
    report.decision = Some(Decision {
        rule: "joint off-diagonal Wald or any one-sided diagonal test rejects".to_string(),
        reject: joint_reject || diag_reject,
    });
    report.notes.push(format!(
        "subsample {} = {}; the flag is assumed to be determined before instrument assignment",
        opts.flag, opts.value
    ));
    report.notes.push(MULTIPLICITY_NOTE.to_string());
    Ok(report.finish())
}
