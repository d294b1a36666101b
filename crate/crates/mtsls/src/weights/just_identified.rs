//! Just-identified designs: one mutually exclusive binary instrument per
//! treatment indicator, support `{0, e_1, ..., e_n}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::identification_report;
use crate::design::{CodingKind, Population, ResponseType};
use crate::error::{Error, Result};
use crate::linalg;
use crate::projection::PopulationMoments;

/// Largest number of indicators for the exhaustive labeling search.
pub const MAX_PERMUTATION_N: usize = 6;

/// Role of a type for one indicator under a labeling `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorRole {
    AlwaysTaker,
    NeverTaker,
    /// Takes the indicator exactly at the instrument value mapped to it.
    Complier,
    Violating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeClassification {
    pub type_index: usize,
    /// Treatment chosen at each instrument value `v = 0..n`.
    pub by_value: Vec<usize>,
    /// Role per indicator.
    pub roles: Vec<IndicatorRole>,
}

impl TypeClassification {
    pub fn allowed(&self) -> bool {
        self.roles.iter().all(|r| *r != IndicatorRole::Violating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustIdentifiedAnalysis {
    /// Instrument value of each support point.
    pub value_of_point: Vec<usize>,
    /// `f(v)`: indicator label (`0` for none, `k` for indicator `k`) that
    /// instrument value `v` switches on. `None` when no labeling works.
    pub permutation: Option<Vec<usize>>,
    /// Number of labelings that work.
    pub solutions: usize,
    /// Classification under `permutation`, or under the identity labeling when
    /// no permutation exists.
    pub types: Vec<TypeClassification>,
    pub verdict: bool,
    /// Verdict under the identity labeling `f(v) = v`.
    pub identity_verdict: bool,
    /// Direct diagonal check of `Cov(Z, D)⁻¹ Cov(Z, v_s)` on every type;
    /// `None` when the rank condition fails.
    pub weight_verdict: Option<bool>,
    /// Same check through the predicted-treatment weights.
    pub projection_verdict: Option<bool>,
}

impl JustIdentifiedAnalysis {
    /// Combinatorial and weight verdicts agree (vacuous without rank).
    ///
    /// A labeling is sufficient for proper weights but not always necessary:
    /// in a sparse mixture an indicator's mean path can take just two values
    /// without being one-hot, e.g. `{(2,2,0), (1,0,0)}`, and the weights are
    /// still proper.
    pub fn consistent(&self) -> bool {
        self.weight_verdict.map_or(true, |w| w == self.verdict)
            && self.projection_verdict.map_or(true, |w| w == self.verdict)
    }
}

fn value_labels(pop: &Population) -> Result<Vec<usize>> {
    let n = pop.coding().n();
    if pop.design().m() != n {
        return Err(Error::Shape(format!(
            "just-identified analysis needs {n} instruments for {n} indicators, design has {}",
            pop.design().m()
        )));
    }
    pop.design().exclusive_labels().ok_or_else(|| {
        Error::Shape("design support is not {0, e_1, ..., e_n} (mutually exclusive binary instruments)".into())
    })
}

/// Indicator paths by instrument value: `paths[i][k][v] = s_k(v)` for type `i`.
fn paths_by_value(pop: &Population, labels: &[usize]) -> Vec<Vec<Vec<bool>>> {
    let n = pop.coding().n();
    pop.types()
        .iter()
        .map(|c| {
            let mut by_v = vec![0usize; n + 1];
            for (j, &v) in labels.iter().enumerate() {
                by_v[v] = c.assignment.assignment[j];
            }
            (0..n)
                .map(|k| (0..=n).map(|v| pop.coding().contains(k, by_v[v])).collect())
                .collect()
        })
        .collect()
}

fn role(path: &[bool], k: usize, f: &[usize]) -> IndicatorRole {
    if path.iter().all(|&b| b) {
        IndicatorRole::AlwaysTaker
    } else if path.iter().all(|&b| !b) {
        IndicatorRole::NeverTaker
    } else if path.iter().enumerate().all(|(v, &b)| b == (f[v] == k + 1)) {
        IndicatorRole::Complier
    } else {
        IndicatorRole::Violating
    }
}

/// Classify every type under the labeling `f` (`f[v]` is the indicator label
/// switched on by instrument value `v`).
pub fn classify_under(pop: &Population, f: &[usize]) -> Result<Vec<TypeClassification>> {
    let labels = value_labels(pop)?;
    let n = pop.coding().n();
    if f.len() != n + 1 {
        return Err(Error::Shape(format!("labeling has {} entries, need {}", f.len(), n + 1)));
    }
    let paths = paths_by_value(pop, &labels);
    Ok(pop
        .types()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut by_value = vec![0usize; n + 1];
            for (j, &v) in labels.iter().enumerate() {
                by_value[v] = c.assignment.assignment[j];
            }
            TypeClassification {
                type_index: i,
                by_value,
                roles: (0..n).map(|k| role(&paths[i][k], k, f)).collect(),
            }
        })
        .collect())
}

/// Exhaustive search with pruning over labelings `f`, plus the two weight
/// checks.
pub fn just_identified_analysis(pop: &Population) -> Result<JustIdentifiedAnalysis> {
    let labels = value_labels(pop)?;
    let n = pop.coding().n();
    if n > MAX_PERMUTATION_N {
        return Err(Error::Shape(format!(
            "labeling search is capped at {MAX_PERMUTATION_N} indicators, got {n}"
        )));
    }
    let paths = paths_by_value(pop, &labels);
    // Only non-constant indicator paths constrain the labeling.
    let active: Vec<(usize, Vec<bool>)> = paths
        .iter()
        .flat_map(|p| p.iter().enumerate())
        .filter(|(_, path)| path.iter().any(|&b| b) && path.iter().any(|&b| !b))
        .map(|(k, path)| (k, path.clone()))
        .collect();

    let mut f = vec![usize::MAX; n + 1];
    let mut used = vec![false; n + 1];
    let mut first: Option<Vec<usize>> = None;
    let mut solutions = 0usize;
    search(0, n, &active, &mut f, &mut used, &mut first, &mut solutions);

    let identity: Vec<usize> = (0..=n).collect();
    let identity_types = classify_under(pop, &identity)?;
    let identity_verdict = identity_types.iter().all(|t| t.allowed());
    let (types, verdict) = match &first {
        Some(f) => (classify_under(pop, f)?, true),
        None => (identity_types, false),
    };

    let weight_verdict = lemma_route_verdict(pop)?;
    let projection_verdict = match identification_report(pop) {
        Ok(r) => Some(r.proper),
        Err(e) if e.is_numerical() => None,
        Err(e) => return Err(e),
    };

    Ok(JustIdentifiedAnalysis {
        value_of_point: labels,
        permutation: first,
        solutions,
        types,
        verdict,
        identity_verdict,
        weight_verdict,
        projection_verdict,
    })
}

fn search(
    v: usize,
    n: usize,
    active: &[(usize, Vec<bool>)],
    f: &mut Vec<usize>,
    used: &mut Vec<bool>,
    first: &mut Option<Vec<usize>>,
    solutions: &mut usize,
) {
    if v > n {
        *solutions += 1;
        if first.is_none() {
            *first = Some(f.clone());
        }
        return;
    }
    for c in 0..=n {
        if used[c] {
            continue;
        }
        // Every active path must take its indicator at v exactly when f(v) maps to it.
        if active.iter().all(|(k, path)| path[v] == (c == k + 1)) {
            used[c] = true;
            f[v] = c;
            search(v + 1, n, active, f, used, first, solutions);
            used[c] = false;
            f[v] = usize::MAX;
        }
    }
}

/// `w^s = Cov(Z, D)⁻¹ Cov(Z, v_s)` is a non-negative diagonal matrix for
/// every type. `None` when `Cov(Z, D)` is singular.
fn lemma_route_verdict(pop: &Population) -> Result<Option<bool>> {
    let mom = PopulationMoments::new(pop);
    if !(linalg::condition_number(&mom.cov_zd) < linalg::COND_LIMIT) {
        return Ok(None);
    }
    let tol = super::VERDICT_TOL;
    for i in 0..pop.types().len() {
        let v = pop.indicator_matrix(i);
        let cov_zv = linalg::weighted_cov(&mom.z, &v, &mom.probs);
        let w: DMatrix<f64> = linalg::solve_checked(&mom.cov_zd, &cov_zv, "Cov(Z, D)")?;
        let n = w.nrows();
        for k in 0..n {
            if w[(k, k)] < -tol {
                return Ok(Some(false));
            }
            for l in 0..n {
                if k != l && w[(k, l)].abs() > tol {
                    return Ok(Some(false));
                }
            }
        }
    }
    Ok(Some(true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedAllowed {
    /// Per type: constant, or selects `k` at `V = k` and `k − 1` otherwise.
    pub allowed: Vec<bool>,
    /// For allowed non-constant types, the `k` they move to.
    pub margin: Vec<Option<usize>>,
    pub verdict: bool,
    /// Per-type agreement with the identity-labeling classification under the
    /// ordered indicators.
    pub matches_classification: bool,
}

/// Allowed types for an ordered coding in a just-identified design.
pub fn ordered_allowed_types(pop: &Population) -> Result<OrderedAllowed> {
    if pop.coding().kind() != CodingKind::Ordered {
        return Err(Error::Shape("ordered_allowed_types needs an ordered coding".into()));
    }
    let labels = value_labels(pop)?;
    let n = pop.coding().n();
    let identity: Vec<usize> = (0..=n).collect();
    let classes = classify_under(pop, &identity)?;
    let mut allowed = Vec::new();
    let mut margin = Vec::new();
    for c in pop.types() {
        let mut by_v = vec![0usize; n + 1];
        for (j, &v) in labels.iter().enumerate() {
            by_v[v] = c.assignment.assignment[j];
        }
        let (ok, k) = ordered_shape(&ResponseType::new(by_v));
        allowed.push(ok);
        margin.push(k);
    }
    let matches_classification = allowed.iter().zip(&classes).all(|(a, c)| *a == c.allowed());
    Ok(OrderedAllowed {
        verdict: allowed.iter().all(|&a| a),
        allowed,
        margin,
        matches_classification,
    })
}

/// Constant, or `s(v) = k` for `v = k` and `k − 1` elsewhere (`s` indexed by
/// instrument value).
fn ordered_shape(s: &ResponseType) -> (bool, Option<usize>) {
    if s.is_constant() {
        return (true, None);
    }
    let a = &s.assignment;
    for k in 1..a.len() {
        if a.iter().enumerate().all(|(v, &t)| t == if v == k { k } else { k - 1 }) {
            return (true, Some(k));
        }
    }
    (false, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{InstrumentDesign, TreatmentCoding, TypeComponent};

    fn pop_from(support: Vec<Vec<f64>>, coding: TreatmentCoding, types: &[(&[usize], f64)]) -> Population {
        let design = InstrumentDesign::uniform(support).unwrap();
        let n = coding.n();
        let comps = types
            .iter()
            .map(|(a, p)| TypeComponent::new(a.to_vec(), *p, vec![0.0; n], 0.0))
            .collect();
        Population::new(design, coding, comps).unwrap()
    }

    const TABLE_ONE: [(&[usize], f64); 6] = [
        (&[0, 0, 0], 0.1),
        (&[1, 1, 1], 0.1),
        (&[2, 2, 2], 0.2),
        (&[0, 1, 0], 0.1),
        (&[0, 0, 2], 0.2),
        (&[0, 1, 2], 0.3),
    ];

    #[test]
    fn allowed_types_pass_with_identity() {
        let pop = pop_from(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            TreatmentCoding::unordered(3),
            &TABLE_ONE,
        );
        let a = just_identified_analysis(&pop).unwrap();
        assert!(a.verdict);
        assert_eq!(a.permutation, Some(vec![0, 1, 2]));
        assert_eq!(a.solutions, 1);
        assert_eq!(a.weight_verdict, Some(true));
        assert!(a.consistent());
    }

    #[test]
    fn swapped_instruments_give_the_swap() {
        // Point (1,0) now switches on treatment 2 and (0,1) treatment 1.
        let pop = pop_from(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            TreatmentCoding::unordered(3),
            &TABLE_ONE,
        );
        let a = just_identified_analysis(&pop).unwrap();
        assert!(a.verdict);
        assert_eq!(a.value_of_point, vec![0, 2, 1]);
        assert_eq!(a.permutation, Some(vec![0, 2, 1]));
        assert!(a.consistent());
    }

    #[test]
    fn four_treatment_allowed_population() {
        let types: Vec<(&[usize], f64)> = vec![
            (&[0, 0, 0, 0], 0.05),
            (&[1, 1, 1, 1], 0.05),
            (&[2, 2, 2, 2], 0.05),
            (&[3, 3, 3, 3], 0.05),
            (&[0, 1, 0, 0], 0.1),
            (&[0, 0, 2, 0], 0.1),
            (&[0, 0, 0, 3], 0.1),
            (&[0, 1, 2, 0], 0.1),
            (&[0, 1, 0, 3], 0.1),
            (&[0, 0, 2, 3], 0.1),
            (&[0, 1, 2, 3], 0.2),
        ];
        let support = (0..4)
            .map(|v| (0..3).map(|i| if v == i + 1 { 1.0 } else { 0.0 }).collect())
            .collect();
        let pop = pop_from(support, TreatmentCoding::unordered(4), &types);
        let a = just_identified_analysis(&pop).unwrap();
        assert!(a.verdict);
        assert_eq!(a.types.len(), 11);
        assert!(a.types.iter().all(|t| t.allowed()));
        assert!(a.consistent());
    }

    #[test]
    fn ordered_allowed_shapes() {
        assert_eq!(ordered_shape(&ResponseType::new(vec![1, 1, 2, 1])), (true, Some(2)));
        assert_eq!(ordered_shape(&ResponseType::new(vec![2, 2, 2])), (true, None));
        assert_eq!(ordered_shape(&ResponseType::new(vec![0, 1, 2])).0, false);
    }

    #[test]
    fn non_just_identified_design_is_a_shape_error() {
        let pop = pop_from(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            TreatmentCoding::unordered(2),
            &[(&[0, 1, 1], 1.0)],
        );
        assert!(matches!(just_identified_analysis(&pop), Err(Error::Shape(_))));
    }
}
