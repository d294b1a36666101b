//! Sample tests of the testable implications of proper weights.
//!
//! All regressions put the dependent variable, demeaned within cells, on the
//! demeaned predicted treatments `P̈` (or `Z̈`). Without a cell column this is
//! plain centering, which matches including an intercept. Standard errors
//! are HC0. One-sided hypotheses use one-sided normal p-values; equalities
//! are two-sided; joint equalities use a Wald test. No multiplicity
//! correction is applied.

mod covary;
mod kitagawa;
mod linearity;
mod subsample;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use covary::{covary_similarly_test, CovaryOptions};
pub use kitagawa::{kitagawa_test, Bins, KitagawaOptions};
pub use linearity::{linearity_test, linearity_test_population, LinearityOptions};
pub use subsample::{subsample_first_stage_test, SubsampleOptions};

use crate::design::{Dataset, TreatmentCoding};
use crate::error::Result;
use crate::estimator::drop_small_cells;
use crate::projection;

pub const DEFAULT_ALPHA: f64 = 0.05;

pub(crate) const MULTIPLICITY_NOTE: &str =
    "p-values are not adjusted for testing several hypotheses or subsamples";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisForm {
    /// `θ ≥ 0`, one-sided.
    NonNegative,
    /// `θ ≤ 0`, one-sided.
    NonPositive,
    /// `θ = 0`, two-sided.
    Zero,
    /// Several equalities at once, Wald.
    JointZero,
}

impl HypothesisForm {
    pub fn symbol(self) -> &'static str {
        match self {
            HypothesisForm::NonNegative => ">= 0",
            HypothesisForm::NonPositive => "<= 0",
            HypothesisForm::Zero | HypothesisForm::JointZero => "= 0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub equation: String,
    pub regressor: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// e.g. `η_12 = 0`.
    pub label: String,
    pub form: HypothesisForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    /// z for single hypotheses, Wald χ² for joint ones, F for RESET.
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    pub p_value: f64,
    pub reject: bool,
}

impl Hypothesis {
    pub(crate) fn single(label: String, form: HypothesisForm, est: f64, se: f64, alpha: f64) -> Self {
        use crate::regression::{p_nonnegative, p_nonpositive, p_two_sided};
        let p = match form {
            HypothesisForm::NonNegative => p_nonnegative(est, se),
            HypothesisForm::NonPositive => p_nonpositive(est, se),
            _ => p_two_sided(est, se),
        };
        let statistic = if se > 0.0 { est / se } else { 0.0 };
        Hypothesis {
            label,
            form,
            estimate: Some(est),
            std_error: Some(se),
            statistic,
            df: None,
            p_value: p,
            reject: p < alpha,
        }
    }

    pub(crate) fn joint(label: String, stat: f64, df: usize, p: f64, alpha: f64) -> Self {
        Hypothesis {
            label,
            form: HypothesisForm::JointZero,
            estimate: None,
            std_error: None,
            statistic: stat,
            df: Some(df),
            p_value: p,
            reject: p < alpha,
        }
    }
}

/// Overall verdict of a test that combines several hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub rule: String,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub replicates: usize,
    pub seed: u64,
    /// Replicates dropped because a resample failed the rank condition.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMean {
    pub cell: Option<String>,
    pub lo: f64,
    pub hi: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub weight: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetResult {
    pub cell: Option<String>,
    pub f: f64,
    pub df1: usize,
    pub df2: f64,
    pub p_value: f64,
    pub rss_linear: f64,
    pub rss_augmented: f64,
    pub slope: f64,
    pub intercept: f64,
    pub distinct_values: usize,
    /// Exact `max |E[P_k|P_l] − linear fit|`, population mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub n_obs: usize,
    /// `tr Var(P̈|x) / tr Var(P̈)`.
    pub scale: f64,
    /// Sample `Var(P̈)⁻¹ Var(P̈|x)`.
    pub matrix: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    /// `matrix[l][k] / matrix[k][k]`.
    pub ratios: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub alpha: f64,
    pub n_obs: usize,
    pub coefficients: Vec<Coefficient>,
    pub hypotheses: Vec<Hypothesis>,
    /// Some reported hypothesis rejects at `alpha`.
    pub reject_any: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapInfo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reset: Vec<ResetResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binned_means: Vec<BinnedMean>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_cells: Vec<String>,
    pub notes: Vec<String>,
}

impl TestReport {
    pub(crate) fn new(test: &str, alpha: f64, n_obs: usize) -> Self {
        TestReport {
            test: test.to_string(),
            alpha,
            n_obs,
            coefficients: Vec::new(),
            hypotheses: Vec::new(),
            reject_any: false,
            decision: None,
            bootstrap: None,
            reset: Vec::new(),
            binned_means: Vec::new(),
            cells: Vec::new(),
            dropped_cells: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub(crate) fn finish(mut self) -> Self {
        self.reject_any = self.hypotheses.iter().any(|h| h.reject);
        self
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn hypothesis(&self, label: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.label == label)
    }

    /// Plain-text rendering: one block of coefficients per equation, then
    /// the hypotheses with p-values.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}  (N = {}, alpha = {})", self.test, self.n_obs, self.alpha);
        if !self.coefficients.is_empty() {
            let mut regressors: Vec<&str> = Vec::new();
            let mut equations: Vec<&str> = Vec::new();
            for c in &self.coefficients {
                if !regressors.contains(&c.regressor.as_str()) {
                    regressors.push(&c.regressor);
                }
                if !equations.contains(&c.equation.as_str()) {
                    equations.push(&c.equation);
                }
            }
            let w = equations.iter().map(|e| e.chars().count()).max().unwrap_or(0).max(10);
            let _ = write!(s, "\n{:w$}", "dependent");
            for r in &regressors {
                let _ = write!(s, "  {:>22}", r);
            }
            s.push('\n');
            for e in &equations {
                let _ = write!(s, "{:w$}", e);
                for r in &regressors {
                    match self.coefficients.iter().find(|c| c.equation == *e && c.regressor == *r) {
                        Some(c) => {
                            let cell = format!("{} {:.4} ({:.4})", c.name, c.estimate, c.std_error);
                            let _ = write!(s, "  {:>22}", cell);
                        }
                        None => {
                            let _ = write!(s, "  {:>22}", "");
                        }
                    }
                }
                s.push('\n');
            }
        }
        for r in &self.reset {
            let _ = writeln!(
                s,
                "\nRESET{}: F({}, {:.0}) = {:.4}, p = {:.4}; linear fit {:.4} + {:.4} x",
                r.cell.as_ref().map(|c| format!(" [{c}]")).unwrap_or_default(),
                r.df1,
                r.df2,
                r.f,
                r.p_value,
                r.intercept,
                r.slope
            );
        }
        for c in &self.cells {
            let _ = writeln!(s, "\ncell {} (N = {}, a = {:.4})", c.label, c.n_obs, c.scale);
            for (row, se) in c.matrix.iter().zip(&c.std_errors) {
                let parts: Vec<String> = row.iter().zip(se).map(|(v, e)| format!("{v:.4} ({e:.4})")).collect();
                let _ = writeln!(s, "  {}", parts.join("  "));
            }
        }
        if !self.hypotheses.is_empty() {
            let _ = writeln!(s, "\n{:28} {:>12} {:>10}  verdict", "hypothesis", "statistic", "p-value");
            for h in &self.hypotheses {
                let _ = writeln!(
                    s,
                    "{:28} {:>12.4} {:>10.4}  {}",
                    h.label,
                    h.statistic,
                    h.p_value,
                    if h.reject { "reject" } else { "not rejected" }
                );
            }
        }
        if let Some(d) = &self.decision {
            let _ = writeln!(s, "\noverall: {} ({})", if d.reject { "reject" } else { "not rejected" }, d.rule);
        }
        if let Some(b) = &self.bootstrap {
            let _ = writeln!(s, "\nbootstrap: {} replicates, seed {}, {} failed", b.replicates, b.seed, b.failed);
        }
        if !self.dropped_cells.is_empty() {
            let _ = writeln!(s, "dropped cells: {}", self.dropped_cells.join(", "));
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Predicted treatments fitted on the full sample.
pub(crate) struct Fitted {
    pub data: Dataset,
    /// `P̈`, demeaned within cells (centered without cells).
    pub p: DMatrix<f64>,
    /// `Z̈`.
    pub z: DMatrix<f64>,
    /// `D̈`.
    pub d: DMatrix<f64>,
    pub dropped: Vec<String>,
}

pub(crate) fn fit_full_sample(data: &Dataset, coding: &TreatmentCoding, fixed_effects: bool) -> Result<Fitted> {
    data.check_treatments(coding)?;
    let (data, dropped) = if fixed_effects {
        if data.cells().is_none() {
            return Err(crate::error::Error::InvalidData(
                "fixed effects requested but no cell column".into(),
            ));
        }
        drop_small_cells(data)?
    } else {
        (data.without_cells(), Vec::new())
    };
    let dm = projection::demean_within_cells(&data, coding)?;
    let (_, p) = projection::fit_projection_demeaned(&dm)?;
    Ok(Fitted {
        data,
        p,
        z: dm.z,
        d: dm.d,
        dropped,
    })
}

/// Cell index per row and cell count (a single cell without a cell column).
pub(crate) fn cell_index(data: &Dataset) -> (Vec<usize>, usize) {
    match data.cells() {
        Some(c) => (c.to_vec(), data.cell_labels().len()),
        None => (vec![0; data.len()], 1),
    }
}

/// Indicator names `P_1 … P_n` (1-based, as reported).
pub(crate) fn p_name(k: usize) -> String {
    format!("P_{}", k + 1)
}
