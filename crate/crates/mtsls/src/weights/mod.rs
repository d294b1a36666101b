//! Exact response-type weight matrices and identification verdicts.
//!
//! For a type `s`, `w^s = Var(P)⁻¹ Cov(P, v_s(Z))`; entry `(k, l)` is the
//! weight on `β_l^s` inside `β_k^2SLS`. Every quantity here is an exact
//! expectation over the design support.

mod covariates;
mod decomposition;
mod just_identified;
mod monotonicity;

pub use covariates::{covariate_weight_analysis, CellAnalysis, CovariateAnalysis};
pub use decomposition::{bias_decomposition, BiasDecomposition};
pub use just_identified::{
    classify_under, just_identified_analysis, ordered_allowed_types, IndicatorRole, JustIdentifiedAnalysis,
    OrderedAllowed, TypeClassification,
};
pub use monotonicity::{kirkeboen_conditions, monotonicity_checks, KirkeboenCheck, MonotonicityReport};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{Population, ResponseType};
use crate::error::Result;
use crate::estimator::predicted_moments;
use crate::linalg;
use crate::projection::{fwl_residualize_values, Residualized};

/// Numerical zero for verdicts on exact-moment populations.
pub const VERDICT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    /// Position of the type in the population.
    pub type_index: usize,
    pub assignment: ResponseType,
    /// Row `k`, column `l`: weight on `β_l^s` inside `β_k^2SLS`.
    pub w: Vec<Vec<f64>>,
    /// Largest gap between the direct and the FWL computation.
    pub route_gap: f64,
}

impl WeightMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.w)
    }
}

/// Precomputed projection moments for evaluating many types.
pub struct WeightOracle {
    /// `P − E[P]` on the support, `J × n`.
    p_centered: DMatrix<f64>,
    probs: Vec<f64>,
    var_p: DMatrix<f64>,
    residuals: Vec<Residualized>,
}

impl WeightOracle {
    pub fn new(pop: &Population) -> Result<Self> {
        let pm = predicted_moments(pop)?;
        let probs = pop.design().probs().to_vec();
        let p_centered = linalg::center(&pm.p, &probs);
        let residuals = (0..pm.p.ncols())
            .map(|k| fwl_residualize_values(&pm.p, &probs, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightOracle {
            p_centered,
            probs,
            var_p: pm.var_p,
            residuals,
        })
    }

    pub fn n(&self) -> usize {
        self.var_p.nrows()
    }

    pub fn var_p(&self) -> &DMatrix<f64> {
        &self.var_p
    }

    pub fn residual(&self, k: usize) -> &Residualized {
        &self.residuals[k]
    }

    /// `Cov(P, v)` for a `J × n` indicator path.
    pub fn cov_p(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::weighted_cross(&self.p_centered, v, &self.probs)
    }

    /// `Var(P)⁻¹ Cov(P, v)`.
    pub fn direct(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        linalg::solve_checked(&self.var_p, &self.cov_p(v), "Var(P)")
    }

    /// Row `k` is `Cov(P̃_k, v_l) / Var(P̃_k)`.
    pub fn fwl(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, v.ncols(), |k, l| {
            let r = &self.residuals[k];
            let c: f64 = (0..v.nrows()).map(|j| self.probs[j] * r.values[j] * v[(j, l)]).sum();
            c / r.variance
        })
    }

    /// Second route to the cross-weight numerator: `Cov(P_k, s_l)` minus the
    /// partial-regression combination of `Cov(P_m, s_l)` over `m ≠ k`. With two
    /// treatments this is `Cov(P_k, s_l) − ρ_kl Cov(P_l, s_l)`.
    pub fn rho_margin(&self, v: &DMatrix<f64>, k: usize, l: usize) -> f64 {
        let cov = self.cov_p(v);
        let coefs = &self.residuals[k].partial_coefs;
        let others = (0..self.n()).filter(|&m| m != k);
        let adj: f64 = others.zip(coefs).map(|(m, c)| c * cov[(m, l)]).sum();
        cov[(k, l)] - adj
    }
}

/// Weight matrix of one type under the population's projection.
pub fn response_weight_matrix(pop: &Population, s: &ResponseType) -> Result<WeightMatrix> {
    let oracle = WeightOracle::new(pop)?;
    let v = linalg::from_rows(&s.indicator_path(pop.coding()));
    let index = pop
        .types()
        .iter()
        .position(|c| &c.assignment == s)
        .unwrap_or(usize::MAX);
    weight_matrix_with(&oracle, &v, index, s.clone())
}

fn weight_matrix_with(oracle: &WeightOracle, v: &DMatrix<f64>, index: usize, s: ResponseType) -> Result<WeightMatrix> {
    let direct = oracle.direct(v)?;
    let fwl = oracle.fwl(v);
    let route_gap = linalg::max_abs(&(&direct - &fwl));
    Ok(WeightMatrix {
        type_index: index,
        assignment: s,
        w: linalg::to_rows(&direct),
        route_gap,
    })
}

/// Weight matrices of every type in the population, in population order.
pub fn all_weight_matrices(pop: &Population) -> Result<Vec<WeightMatrix>> {
    let oracle = WeightOracle::new(pop)?;
    pop.types()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let v = pop.indicator_matrix(i);
            weight_matrix_with(&oracle, &v, i, c.assignment.clone())
        })
        .collect()
}

/// `Σ_s Pr[s] w^s`, which equals the identity.
pub fn mixture_weights(pop: &Population, weights: &[WeightMatrix]) -> DMatrix<f64> {
    let n = pop.coding().n();
    let mut acc = DMatrix::zeros(n, n);
    for (c, w) in pop.types().iter().zip(weights) {
        acc += w.matrix() * c.prob;
    }
    acc
}

/// `Σ_s Pr[s] w^s β^s`.
pub fn weighted_effects(pop: &Population, weights: &[WeightMatrix]) -> Vec<f64> {
    let n = pop.coding().n();
    let mut acc = vec![0.0; n];
    for (c, w) in pop.types().iter().zip(weights) {
        for k in 0..n {
            for l in 0..n {
                acc[k] += c.prob * w.w[k][l] * c.beta[l];
            }
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    /// Negative own weight.
    Acm,
    /// Nonzero cross weight.
    Nce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub type_index: usize,
    pub assignment: ResponseType,
    pub kind: ViolationKind,
    pub row: usize,
    pub col: usize,
    /// The offending weight `w_{row,col}`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeVerdict {
    pub type_index: usize,
    pub assignment: ResponseType,
    pub prob: f64,
    pub weights: Vec<Vec<f64>>,
    /// Per row `k`: `w_kk ≥ −tol`.
    pub acm: Vec<bool>,
    /// Per `(k, l)`: `|w_kl| ≤ tol`; diagonal entries are `true`.
    pub nce: Vec<Vec<bool>>,
    /// NCE verdicts from the partial-covariance route.
    pub nce_rho: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoCheck {
    pub row: usize,
    pub col: usize,
    /// Coefficient on `P_col` when `P_row` is regressed on the other
    /// predicted treatments; `Cov(P_k, P_l) / Var(P_l)` with two treatments.
    pub rho: f64,
    /// Whether `Cov(P_k, s_l)` matches the partial combination for every type.
    pub holds: bool,
    /// Largest mismatch across types, in weight units.
    pub max_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub tolerance: f64,
    pub types: Vec<TypeVerdict>,
    pub acm_pass: bool,
    pub nce_pass: bool,
    /// Proper weights: all ACM and all NCE verdicts pass.
    pub proper: bool,
    pub rho: Vec<RhoCheck>,
    /// The two NCE routes agree on every `(s, k, l)`.
    pub routes_agree: bool,
    /// Largest direct-versus-FWL discrepancy over all types.
    pub max_route_gap: f64,
    /// Violations, largest magnitude first.
    pub violations: Vec<Violation>,
}

impl IdentificationReport {
    /// Indices of types with at least one violation, in population order.
    pub fn violating_types(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.violations.iter().map(|v| v.type_index).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn worst(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

pub fn identification_report(pop: &Population) -> Result<IdentificationReport> {
    identification_report_with_tol(pop, VERDICT_TOL)
}

pub fn identification_report_with_tol(pop: &Population, tol: f64) -> Result<IdentificationReport> {
    let oracle = WeightOracle::new(pop)?;
    let n = oracle.n();
    let mut types = Vec::with_capacity(pop.types().len());
    let mut violations = Vec::new();
    let mut routes_agree = true;
    let mut max_route_gap: f64 = 0.0;
    let mut rho_margin_max = vec![vec![0.0_f64; n]; n];

    for (i, c) in pop.types().iter().enumerate() {
        let v = pop.indicator_matrix(i);
        let wm = weight_matrix_with(&oracle, &v, i, c.assignment.clone())?;
        max_route_gap = max_route_gap.max(wm.route_gap);
        let w = &wm.w;
        let acm: Vec<bool> = (0..n).map(|k| w[k][k] >= -tol).collect();
        let nce: Vec<Vec<bool>> = (0..n)
            .map(|k| (0..n).map(|l| k == l || w[k][l].abs() <= tol).collect())
            .collect();
        let nce_rho: Vec<Vec<bool>> = (0..n)
            .map(|k| {
                (0..n)
                    .map(|l| {
                        if k == l {
                            return true;
                        }
                        let margin = oracle.rho_margin(&v, k, l) / oracle.residual(k).variance;
                        rho_margin_max[k][l] = rho_margin_max[k][l].max(margin.abs());
                        margin.abs() <= tol
                    })
                    .collect()
            })
            .collect();
        if nce != nce_rho {
            routes_agree = false;
        }
        for k in 0..n {
            if !acm[k] {
                violations.push(Violation {
                    type_index: i,
                    assignment: c.assignment.clone(),
                    kind: ViolationKind::Acm,
                    row: k,
                    col: k,
                    margin: w[k][k],
                });
            }
            for l in 0..n {
                if !nce[k][l] {
                    violations.push(Violation {
                        type_index: i,
                        assignment: c.assignment.clone(),
                        kind: ViolationKind::Nce,
                        row: k,
                        col: l,
                        margin: w[k][l],
                    });
                }
            }
        }
        types.push(TypeVerdict {
            type_index: i,
            assignment: c.assignment.clone(),
            prob: c.prob,
            weights: wm.w,
            acm,
            nce,
            nce_rho,
        });
    }
    violations.sort_by(|a, b| {
        b.margin
            .abs()
            .partial_cmp(&a.margin.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.type_index.cmp(&b.type_index))
    });
    let acm_pass = types.iter().all(|t| t.acm.iter().all(|&a| a));
    let nce_pass = types.iter().all(|t| t.nce.iter().flatten().all(|&a| a));
    let mut rho = Vec::new();
    for k in 0..n {
        let coefs = &oracle.residual(k).partial_coefs;
        let others: Vec<usize> = (0..n).filter(|&m| m != k).collect();
        for (pos, &l) in others.iter().enumerate() {
            rho.push(RhoCheck {
                row: k,
                col: l,
                rho: coefs[pos],
                holds: rho_margin_max[k][l] <= tol,
                max_margin: rho_margin_max[k][l],
            });
        }
    }
    Ok(IdentificationReport {
        tolerance: tol,
        types,
        acm_pass,
        nce_pass,
        proper: acm_pass && nce_pass,
        rho,
        routes_agree,
        max_route_gap,
        violations,
    })
}

/// Effects that expose a violation: `β_col = 1` for the offending type and
/// zero everywhere else. All effects then share a sign, yet the estimand's
/// `row` entry equals `Pr[s]·margin`, which is negative for an own-weight
/// violation and nonzero contamination for a cross-weight one.
pub fn adversarial_effects(pop: &Population, violation: &Violation) -> Result<Population> {
    let n = pop.coding().n();
    let types = pop
        .types()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut c = c.clone();
            c.beta = vec![0.0; n];
            c.y0 = 0.0;
            if i == violation.type_index {
                c.beta[violation.col] = 1.0;
            }
            c
        })
        .collect();
    pop.with_types(types)
}
