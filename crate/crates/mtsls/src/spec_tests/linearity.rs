//! Is `E[P_k | P_l]` affine?
//!
//! RESET-style: regress `P_k` on `[1, P_l]`, then add the square and cube of
//! the standardized `P_l` (these span the same space as powers of the fitted
//! values whenever the slope is nonzero) and F-test the added terms. Powers
//! are dropped when `P_l` has too few distinct values to identify them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{cell_index, fit_full_sample, p_name, BinnedMean, Hypothesis, ResetResult, TestReport};
use crate::design::{Dataset, Population, TreatmentCoding};
use crate::error::{Error, Result};
use crate::estimator::effective_count;
use crate::linalg;
use crate::projection::fit_projection_population;
use crate::regression::f_pvalue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityOptions {
    /// `(k, l)`: test `E[P_k | P_l]`, 0-based.
    pub pair: (usize, usize),
    pub fixed_effects: bool,
    /// Number of equal-mass bins for the binned means.
    pub bins: usize,
    pub alpha: f64,
}

impl LinearityOptions {
    pub fn new(k: usize, l: usize) -> Self {
        LinearityOptions {
            pair: (k, l),
            fixed_effects: false,
            bins: 20,
            alpha: super::DEFAULT_ALPHA,
        }
    }
}

fn distinct_groups(x: &[f64], order: &[usize]) -> Vec<Vec<usize>> {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())) + 1.0;
    let tol = 1e-10 * scale;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &i in order {
        if groups.is_empty() || x[i] - last > tol {
            groups.push(Vec::new());
        }
        last = x[i];
        groups.last_mut().expect("group").push(i);
    }
    groups
}

fn sorted_order(x: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    order
}

fn weighted_rss(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let (xs, ys) = crate::projection::scale_rows(x, y, w);
    let b = linalg::least_squares(&xs, &ys, "RESET regression")?;
    let r = y - x * &b;
    let rss = (0..r.nrows()).map(|i| w[i] * r[(i, 0)].powi(2)).sum();
    Ok((b, rss))
}

/// RESET on `y` given `x`; `w` sums to one over the rows used.
fn reset(x: &[f64], y: &[f64], w: &[f64], count: f64, cell: Option<String>) -> Result<ResetResult> {
    let order = sorted_order(x);
    let groups: Vec<Vec<usize>> = distinct_groups(x, &order)
        .into_iter()
        .filter(|g| g.iter().any(|&i| w[i] > 0.0))
        .collect();
    let distinct = groups.len();
    if distinct < 3 {
        return Err(Error::InsufficientVariation(format!(
            "{} distinct predicted-treatment values{}; need at least 3",
            distinct,
            cell.as_ref().map(|c| format!(" in cell {c}")).unwrap_or_default()
        )));
    }
    let q = (distinct - 2).min(2);
    let df2 = count - 2.0 - q as f64;
    if df2 <= 0.0 {
        return Err(Error::InsufficientVariation("too few observations for the RESET regression".into()));
    }
    let n = x.len();
    let mean: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    let sd = x.iter().zip(w).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>().sqrt();
    let xs: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let ymat = DMatrix::from_column_slice(n, 1, y);
    let restricted = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let augmented = DMatrix::from_fn(n, 2 + q, |i, j| match j {
        0 => 1.0,
        1 => x[i],
        p => xs[i].powi(p as i32),
    });
    let (b, rss_r) = weighted_rss(&restricted, &ymat, w)?;
    let (_, rss_u) = weighted_rss(&augmented, &ymat, w)?;
    let ymean: f64 = y.iter().zip(w).map(|(a, b)| a * b).sum();
    let scale = y.iter().zip(w).map(|(a, b)| b * (a - ymean).powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);
    let gap = (rss_r - rss_u).max(0.0);
    let (f, p) = if gap <= 1e-12 * scale {
        (0.0, 1.0)
    } else if rss_u <= 1e-14 * scale {
        (f64::INFINITY, 0.0)
    } else {
        let f = (gap / q as f64) / (rss_u / df2);
        (f, f_pvalue(f, q as f64, df2))
    };
    Ok(ResetResult {
        cell,
        f,
        df1: q,
        df2,
        p_value: p,
        rss_linear: rss_r,
        rss_augmented: rss_u,
        slope: b[(1, 0)],
        intercept: b[(0, 0)],
        distinct_values: distinct,
        conditional_gap: None,
    })
}

/// Largest deviation of the exact conditional mean `E[y | x]` from its
/// weighted linear fit.
fn conditional_gap(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    let order = sorted_order(x);
    let groups = distinct_groups(x, &order);
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    let mut gw = Vec::new();
    for g in &groups {
        let m: f64 = g.iter().map(|&i| w[i]).sum();
        if m <= 0.0 {
            continue;
        }
        gx.push(g.iter().map(|&i| w[i] * x[i]).sum::<f64>() / m);
        gy.push(g.iter().map(|&i| w[i] * y[i]).sum::<f64>() / m);
        gw.push(m);
    }
    let k = gx.len();
    let xm = DMatrix::from_fn(k, 2, |i, j| if j == 0 { 1.0 } else { gx[i] });
    let ym = DMatrix::from_column_slice(k, 1, &gy);
    let (b, _) = weighted_rss(&xm, &ym, &gw)?;
    let fitted = &xm * b;
    Ok((0..k).map(|i| (gy[i] - fitted[(i, 0)]).abs()).fold(0.0, f64::max))
}

fn binned_means(x: &[f64], y: &[f64], w: &[f64], bins: usize, cell: Option<String>) -> Vec<BinnedMean> {
    let order = sorted_order(x);
    let groups = distinct_groups(x, &order);
    let total: f64 = w.iter().sum();
    let bins = bins.max(1);
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut acc = 0.0;
    let mut edge = 1;
    let flush = |rows: &mut Vec<usize>, out: &mut Vec<BinnedMean>| {
        if rows.is_empty() {
            return;
        }
        let m: f64 = rows.iter().map(|&i| w[i]).sum();
        let div = if m > 0.0 { m } else { 1.0 };
        out.push(BinnedMean {
            cell: cell.clone(),
            lo: x[rows[0]],
            hi: x[*rows.last().expect("non-empty")],
            mean_x: rows.iter().map(|&i| w[i] * x[i]).sum::<f64>() / div,
            mean_y: rows.iter().map(|&i| w[i] * y[i]).sum::<f64>() / div,
            weight: m,
            count: rows.len(),
        });
        rows.clear();
    };
    for g in groups {
        acc += g.iter().map(|&i| w[i]).sum::<f64>();
        current.extend(g);
        if acc >= edge as f64 * total / bins as f64 - 1e-12 {
            flush(&mut current, &mut out);
            while edge as f64 * total / bins as f64 <= acc + 1e-12 && edge < bins {
                edge += 1;
            }
        }
    }
    flush(&mut current, &mut out);
    out
}

fn check_pair(pair: (usize, usize), n: usize) -> Result<()> {
    let (k, l) = pair;
    if k >= n || l >= n || k == l {
        return Err(Error::InvalidInput(format!(
            "pair ({}, {}) must name two different indicators out of {n}",
            k + 1,
            l + 1
        )));
    }
    Ok(())
}

fn push_reset(report: &mut TestReport, r: &ResetResult, k: usize, l: usize, alpha: f64) {
    let label = format!(
        "E[{} | {}] linear{}",
        p_name(k),
        p_name(l),
        r.cell.as_ref().map(|c| format!(" [{c}]")).unwrap_or_default()
    );
    let mut h = Hypothesis::joint(label, r.f, r.df1, r.p_value, alpha);
    h.form = super::HypothesisForm::JointZero;
    report.hypotheses.push(h);
}

pub fn linearity_test(data: &Dataset, coding: &TreatmentCoding, opts: &LinearityOptions) -> Result<TestReport> {
    check_pair(opts.pair, coding.n())?;
    let (k, l) = opts.pair;
    let fit = fit_full_sample(data, coding, opts.fixed_effects)?;
    let d = &fit.data;
    let w = linalg::normalized_weights(d.weights(), d.len());
    let count = effective_count(d);
    let x: Vec<f64> = fit.p.column(l).iter().copied().collect();
    let y: Vec<f64> = fit.p.column(k).iter().copied().collect();

    let mut report = TestReport::new("linearity", opts.alpha, d.len());
    report.dropped_cells = fit.dropped.clone();
    let pooled = reset(&x, &y, &w, count, None)?;
    push_reset(&mut report, &pooled, k, l, opts.alpha);
    report.binned_means = binned_means(&x, &y, &w, opts.bins, None);
    report.reset.push(pooled);

    if opts.fixed_effects {
        let (cells, n_cells) = cell_index(d);
        let raw = d.weights().map(|v| v.to_vec()).unwrap_or_else(|| vec![1.0; d.len()]);
        for c in 0..n_cells {
            let rows: Vec<usize> = (0..d.len()).filter(|&i| cells[i] == c).collect();
            let label = d.cell_labels()[c].clone();
            let mass: f64 = rows.iter().map(|&i| raw[i]).sum();
            let cw: Vec<f64> = rows.iter().map(|&i| raw[i] / mass).collect();
            let cx: Vec<f64> = rows.iter().map(|&i| x[i]).collect();
            let cy: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            match reset(&cx, &cy, &cw, mass, Some(label.clone())) {
                Ok(r) => {
                    push_reset(&mut report, &r, k, l, opts.alpha);
                    report.binned_means.extend(binned_means(&cx, &cy, &cw, opts.bins, Some(label)));
                    report.reset.push(r);
                }
                Err(e) => report.notes.push(format!("cell {label} skipped: {e}")),
            }
        }
    }
    report.notes.push(
        "with few distinct instrument values (e.g. one per judge) the F degrees of freedom overstate the information"
            .to_string(),
    );
    Ok(report.finish())
}

/// Exact-moment version on the design support. `n_obs` sets the sample size
/// the F statistic is scaled to; `conditional_gap` reports the exact
/// deviation of `E[P_k | P_l]` from affine.
pub fn linearity_test_population(pop: &Population, opts: &LinearityOptions, n_obs: f64) -> Result<TestReport> {
    check_pair(opts.pair, pop.coding().n())?;
    let (k, l) = opts.pair;
    let coef = fit_projection_population(pop)?;
    let p = coef.evaluate_design(pop.design());
    let w = pop.design().probs();
    let x: Vec<f64> = p.column(l).iter().copied().collect();
    let y: Vec<f64> = p.column(k).iter().copied().collect();
    let mut r = reset(&x, &y, w, n_obs, None)?;
    r.conditional_gap = Some(conditional_gap(&x, &y, w)?);
    let mut report = TestReport::new("linearity (population)", opts.alpha, pop.design().len());
    push_reset(&mut report, &r, k, l, opts.alpha);
    report.binned_means = binned_means(&x, &y, w, opts.bins, None);
    report.reset.push(r);
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_relation_gives_zero_f() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.2 + 0.5 * v).collect();
        let w = vec![0.1; 10];
        let r = reset(&x, &y, &w, 1000.0, None).unwrap();
        assert_eq!(r.f, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!((r.slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadratic_relation_is_detected() {
        let x: Vec<f64> = (0..10).map(|i| 0.1 + 0.08 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v - v * v).collect();
        let w = vec![0.1; 10];
        let r = reset(&x, &y, &w, 1000.0, None).unwrap();
        assert!(r.f.is_infinite() || r.p_value < 1e-6);
        assert!(conditional_gap(&x, &y, &w).unwrap() > 1e-3);
    }

    #[test]
    fn two_values_are_not_enough() {
        let err = reset(&[0.0, 1.0, 0.0], &[1.0, 2.0, 1.0], &[1.0 / 3.0; 3], 3.0, None).unwrap_err();
        assert!(matches!(err, Error::InsufficientVariation(_)));
    }

    #[test]
    fn bins_keep_ties_together() {
        let x = vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let y = vec![1.0; 6];
        let b = binned_means(&x, &y, &[1.0 / 6.0; 6], 4, None);
        assert!(b.iter().all(|m| m.count % 2 == 0));
        assert_eq!(b.iter().map(|m| m.count).sum::<usize>(), 6);
    }
}
