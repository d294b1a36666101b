//! Split one 2SLS coefficient into a complier average and two bias terms.
//!
//! For row `k`: compliers are types with `w_kk > 0`, defiers those with
//! `w_kk < 0`. Cross terms pool every `(s, l ≠ k)` pair with weight
//! `Pr[s]·w_kl`; positive ones push effects in, negative ones push them out.
//! Then
//!
//! `β_k = β_c − (β_d − β_c)·w_neg − (β_out − β_in)·w_cross`.

use serde::{Deserialize, Serialize};

use super::all_weight_matrices;
use crate::design::Population;
use crate::error::{Error, Result};
use crate::estimator::tsls_population_estimand;

/// Weights this small are treated as exact zeros when forming groups.
const GROUP_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDecomposition {
    pub row: usize,
    /// `β_k^2SLS` from the moment formula.
    pub estimand: f64,
    pub beta_compliers: f64,
    pub beta_defiers: Option<f64>,
    pub beta_pushed_in: Option<f64>,
    pub beta_pushed_out: Option<f64>,
    /// `Σ_{w_kk > 0} Pr[s] w_kk`.
    pub w_positive: f64,
    /// `−Σ_{w_kk < 0} Pr[s] w_kk` (a non-negative magnitude).
    pub w_negative: f64,
    /// `Σ_{l ≠ k, w_kl > 0} Pr[s] w_kl`.
    pub w_cross: f64,
    /// `−Σ_{l ≠ k, w_kl < 0} Pr[s] w_kl`; equals `w_cross` by the mixture identity.
    pub w_cross_negative: f64,
    /// Right-hand side of the identity.
    pub reconstruction: f64,
    /// `reconstruction − estimand`.
    pub residual: f64,
    /// `(1 + w_neg) / w_neg`: the largest `β_d / β_c` keeping the sign right.
    pub defier_ratio_bound: Option<f64>,
    /// `1 / w_cross`: the largest `(β_out − β_in) / β_c` keeping the sign right.
    pub cross_ratio_bound: Option<f64>,
}

pub fn bias_decomposition(pop: &Population, row: usize) -> Result<BiasDecomposition> {
    let n = pop.coding().n();
    if row >= n {
        return Err(Error::InvalidInput(format!("row {row} out of range for {n} indicators")));
    }
    let weights = all_weight_matrices(pop)?;
    let estimand = tsls_population_estimand(pop)?[row];

    let mut pos = (0.0, 0.0);
    let mut neg = (0.0, 0.0);
    let mut cross_in = (0.0, 0.0);
    let mut cross_out = (0.0, 0.0);
    for (c, w) in pop.types().iter().zip(&weights) {
        let own = w.w[row][row];
        let pw = c.prob * own;
        if own > GROUP_ZERO {
            pos.0 += pw;
            pos.1 += pw * c.beta[row];
        } else if own < -GROUP_ZERO {
            neg.0 += -pw;
            neg.1 += -pw * c.beta[row];
        }
        for l in (0..n).filter(|&l| l != row) {
            let wl = w.w[row][l];
            let pw = c.prob * wl;
            if wl > GROUP_ZERO {
                cross_in.0 += pw;
                cross_in.1 += pw * c.beta[l];
            } else if wl < -GROUP_ZERO {
                cross_out.0 += -pw;
                cross_out.1 += -pw * c.beta[l];
            }
        }
    }
    if pos.0 <= 0.0 {
        return Err(Error::NoCompliers { row });
    }
    let mean = |g: (f64, f64)| if g.0 > 0.0 { Some(g.1 / g.0) } else { None };
    let beta_c = pos.1 / pos.0;
    let beta_d = mean(neg);
    let beta_in = mean(cross_in);
    let beta_out = mean(cross_out);
    let w_neg = neg.0;
    let w_cross = cross_in.0;
    let reconstruction = beta_c
        - (beta_d.unwrap_or(beta_c) - beta_c) * w_neg
        - (beta_out.unwrap_or(0.0) - beta_in.unwrap_or(0.0)) * w_cross;

    Ok(BiasDecomposition {
        row,
        estimand,
        beta_compliers: beta_c,
        beta_defiers: beta_d,
        beta_pushed_in: beta_in,
        beta_pushed_out: beta_out,
        w_positive: pos.0,
        w_negative: w_neg,
        w_cross,
        w_cross_negative: cross_out.0,
        reconstruction,
        residual: reconstruction - estimand,
        defier_ratio_bound: (w_neg > 0.0).then(|| (1.0 + w_neg) / w_neg),
        cross_ratio_bound: (w_cross > 0.0).then(|| 1.0 / w_cross),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{InstrumentDesign, TreatmentCoding, TypeComponent};

    fn pop(types: Vec<TypeComponent>) -> Population {
        let design =
            InstrumentDesign::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        Population::new(design, TreatmentCoding::unordered(3), types).unwrap()
    }

    #[test]
    fn proper_population_has_no_bias_terms() {
        let p = pop(vec![
            TypeComponent::new(vec![0, 0, 0], 0.1, vec![3.0, 1.0], 0.0),
            TypeComponent::new(vec![1, 1, 1], 0.1, vec![-2.0, 5.0], 0.0),
            TypeComponent::new(vec![0, 1, 0], 0.3, vec![1.0, 2.0], 0.0),
            TypeComponent::new(vec![0, 0, 2], 0.2, vec![4.0, -1.0], 0.0),
            TypeComponent::new(vec![0, 1, 2], 0.3, vec![2.0, 0.5], 0.0),
        ]);
        for row in 0..2 {
            let d = bias_decomposition(&p, row).unwrap();
            assert!(d.w_negative.abs() < 1e-12);
            assert!(d.w_cross.abs() < 1e-12);
            assert!((d.beta_compliers - d.estimand).abs() < 1e-10);
            assert!(d.residual.abs() < 1e-10);
        }
    }

    #[test]
    fn cross_effects_are_reconstructed() {
        let p = pop(vec![
            TypeComponent::new(vec![0, 1, 2], 0.5, vec![1.0, 2.0], 0.0),
            TypeComponent::new(vec![0, 2, 2], 0.5, vec![-1.0, 3.0], 0.0),
        ]);
        let d = bias_decomposition(&p, 0).unwrap();
        assert!(d.w_cross > 0.0);
        assert!((d.w_cross - d.w_cross_negative).abs() < 1e-12);
        assert!(d.residual.abs() < 1e-10);
    }
}
