//! Do the predicted treatments covary similarly across covariate cells?
//!
//! Per cell `x`, the sample `C_x = Var(P̈)⁻¹ Var(P̈ | X = x)` should be a
//! multiple of the identity. Off-diagonal elements are tested against zero
//! with a cell-stratified nonparametric bootstrap that re-fits the first
//! stage in every replicate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cell_index, BootstrapInfo, CellResult, Decision, Hypothesis, HypothesisForm, TestReport, MULTIPLICITY_NOTE};
use crate::design::{Dataset, TreatmentCoding};
use crate::dgp::row_rng;
use crate::error::{Error, Result};
use crate::linalg;
use crate::projection;
use crate::regression::wald;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovaryOptions {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for CovaryOptions {
    fn default() -> Self {
        CovaryOptions {
            replicates: 999,
            seed: 0,
            alpha: super::DEFAULT_ALPHA,
        }
    }
}

struct CellStats {
    matrices: Vec<DMatrix<f64>>,
    scales: Vec<f64>,
}

fn cell_stats(data: &Dataset, coding: &TreatmentCoding) -> Result<CellStats> {
    let dm = projection::demean_within_cells(data, coding)?;
    let (_, p) = projection::fit_projection_demeaned(&dm)?;
    let n = p.ncols();
    let mut var_p = linalg::weighted_cross(&p, &p, &dm.w);
    linalg::symmetrize(&mut var_p);
    let mut per_cell = vec![DMatrix::zeros(n, n); dm.n_cells];
    let mut mass = vec![0.0; dm.n_cells];
    for i in 0..p.nrows() {
        let row = p.row(i);
        per_cell[dm.cells[i]] += row.transpose() * row * dm.w[i];
        mass[dm.cells[i]] += dm.w[i];
    }
    let trace = var_p.trace();
    let mut matrices = Vec::with_capacity(dm.n_cells);
    let mut scales = Vec::with_capacity(dm.n_cells);
    for (v, m) in per_cell.iter().zip(&mass) {
        let v = v / *m;
        matrices.push(linalg::solve_checked(&var_p, &v, "Var(P̈)")?);
        scales.push(v.trace() / trace);
    }
    Ok(CellStats { matrices, scales })
}

/// Some row of cell `c` has a different instrument value from the first.
fn instrument_varies(data: &Dataset, cells: &[usize], c: usize) -> bool {
    let mut rows = (0..data.len()).filter(|&i| cells[i] == c && data.weights().is_none_or(|w| w[i] > 0.0));
    match rows.next() {
        Some(first) => rows.any(|i| data.z_row(i) != data.z_row(first)),
        None => false,
    }
}

pub fn covary_similarly_test(data: &Dataset, coding: &TreatmentCoding, opts: &CovaryOptions) -> Result<TestReport> {
    data.check_treatments(coding)?;
    if data.cells().is_none() {
        return Err(Error::InvalidData("the covariate test needs a cell column".into()));
    }
    let (cells, n_cells) = cell_index(data);
    if n_cells < 2 {
        return Err(Error::InvalidInput("the covariate test needs at least two cells".into()));
    }
    let mut bad = data.degenerate_cells();
    for (c, label) in data.cell_labels().iter().enumerate() {
        if !bad.contains(label) && !instrument_varies(data, &cells, c) {
            bad.push(label.clone());
        }
    }
    if !bad.is_empty() {
        return Err(Error::DegenerateCells(bad));
    }
    if opts.replicates < 2 {
        return Err(Error::InvalidInput("at least two bootstrap replicates are needed".into()));
    }
    let n = coding.n();
    let point = cell_stats(data, coding)?;

    let members: Vec<Vec<usize>> = (0..n_cells)
        .map(|c| (0..data.len()).filter(|&i| cells[i] == c).collect())
        .collect();
    let draws: Vec<Option<Vec<DMatrix<f64>>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = row_rng(opts.seed, r);
            let rows: Vec<usize> = members
                .iter()
                .flat_map(|m| (0..m.len()).map(|_| m[rng.random_range(0..m.len())]).collect::<Vec<_>>())
                .collect();
            data.take(&rows)
                .and_then(|d| cell_stats(&d, coding))
                .ok()
                .map(|s| s.matrices)
        })
        .collect();
    let ok: Vec<&Vec<DMatrix<f64>>> = draws.iter().flatten().collect();
    let failed = opts.replicates - ok.len();
    if ok.len() < 2 {
        return Err(Error::InsufficientVariation(format!(
            "only {} of {} bootstrap replicates could be fitted",
            ok.len(),
            opts.replicates
        )));
    }

    let mut report = TestReport::new("covary similarly", opts.alpha, data.len());
    let mut any_reject = false;
    for c in 0..n_cells {
        let label = data.cell_labels()[c].clone();
        let est = &point.matrices[c];
        let off: Vec<(usize, usize)> = (0..n)
            .flat_map(|l| (0..n).filter(move |&k| k != l).map(move |k| (l, k)))
            .collect();
        // Bootstrap draws of every element, then of the off-diagonal vector.
        let b = ok.len() as f64;
        let mean = ok.iter().fold(DMatrix::zeros(n, n), |acc, d| acc + &d[c]) / b;
        let se = ok
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, d| acc + (&d[c] - &mean).map(|v| v * v))
            .map(|v| (v / (b - 1.0)).sqrt());
        let off_mean = DVector::from_iterator(off.len(), off.iter().map(|&(l, k)| mean[(l, k)]));
        let mut cov = DMatrix::zeros(off.len(), off.len());
        for d in &ok {
            let v = DVector::from_iterator(off.len(), off.iter().map(|&(l, k)| d[c][(l, k)])) - &off_mean;
            cov += &v * v.transpose();
        }
        cov /= b - 1.0;

        for &(l, k) in &off {
            report.hypotheses.push(Hypothesis::single(
                format!("C[{label}]_{}{} = 0", l + 1, k + 1),
                HypothesisForm::Zero,
                est[(l, k)],
                se[(l, k)],
                opts.alpha,
            ));
        }
        if off.len() > 1 {
            let theta = DVector::from_iterator(off.len(), off.iter().map(|&(l, k)| est[(l, k)]));
            let (stat, df, p) = wald(&theta, &cov, &DMatrix::identity(off.len(), off.len()))?;
            let h = Hypothesis::joint(format!("C[{label}] off-diagonal = 0 (joint)"), stat, df, p, opts.alpha);
            any_reject |= h.reject;
            report.hypotheses.push(h);
        } else {
            any_reject |= report.hypotheses.last().is_some_and(|h| h.reject);
        }
        let ratios = (0..n)
            .map(|l| (0..n).map(|k| est[(l, k)] / est[(k, k)]).collect())
            .collect();
        report.cells.push(CellResult {
            label,
            n_obs: members[c].len(),
            scale: point.scales[c],
            matrix: linalg::to_rows(est),
            std_errors: linalg::to_rows(&se),
            ratios,
        });
    }
    report.decision = Some(Decision {
        rule: "some cell's off-diagonal elements are jointly nonzero".to_string(),
        reject: any_reject,
    });
    report.bootstrap = Some(BootstrapInfo {
        replicates: opts.replicates,
        seed: opts.seed,
        failed,
    });
    report.notes.push(MULTIPLICITY_NOTE.to_string());
    Ok(report.finish())
}
