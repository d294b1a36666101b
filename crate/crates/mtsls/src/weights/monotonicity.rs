//! Monotonicity notions over a common design, and the next-best-alternative
//! conditions for just-identified unordered designs.

use serde::{Deserialize, Serialize};

use crate::design::Population;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KirkeboenCheck {
    /// Per type: `s_k(k) ≥ s_k(0)` for every `k ≥ 1`.
    pub monotonicity: Vec<bool>,
    /// Per type: `s_k(k) = s_k(0)` implies `s_l(k) = s_l(0)` for every `l`.
    pub irrelevance: Vec<bool>,
    /// Per type: `s(0) = 0`, or the type is constant.
    pub next_best: Vec<bool>,
    /// All three hold for every type.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// For every indicator and pair of support points, all types move the
    /// indicator in the same direction.
    pub joint: bool,
    /// First counterexample `(indicator, point a, point b)`.
    pub joint_violation: Option<(usize, usize, usize)>,
    /// Same, over every treatment dummy `1[T = t]` including `t = 0`.
    pub unordered: bool,
    /// First counterexample `(treatment, point a, point b)`.
    pub unordered_violation: Option<(usize, usize, usize)>,
    /// Present for just-identified designs.
    pub kirkeboen: Option<KirkeboenCheck>,
}

/// Find `(index, a, b)` where two types move an indicator in opposite
/// directions between points `a` and `b`.
fn shared_direction<F>(pop: &Population, count: usize, ind: F) -> Option<(usize, usize, usize)>
where
    F: Fn(usize, usize) -> bool,
{
    let j = pop.design().len();
    for k in 0..count {
        for a in 0..j {
            for b in (a + 1)..j {
                let mut up = false;
                let mut down = false;
                for c in pop.types() {
                    let (x, y) = (ind(k, c.assignment.assignment[a]), ind(k, c.assignment.assignment[b]));
                    up |= x && !y;
                    down |= !x && y;
                }
                if up && down {
                    return Some((k, a, b));
                }
            }
        }
    }
    None
}

pub fn monotonicity_checks(pop: &Population) -> MonotonicityReport {
    let coding = pop.coding();
    let joint_violation = shared_direction(pop, coding.n(), |k, t| coding.contains(k, t));
    let unordered_violation = shared_direction(pop, coding.n_treatments(), |k, t| t == k);
    MonotonicityReport {
        joint: joint_violation.is_none(),
        joint_violation,
        unordered: unordered_violation.is_none(),
        unordered_violation,
        kirkeboen: kirkeboen_conditions(pop).ok(),
    }
}

/// The three next-best conditions under the identity labeling, using the
/// treatment dummies `s_k(v) = 1[s(v) = k]`.
pub fn kirkeboen_conditions(pop: &Population) -> Result<KirkeboenCheck> {
    let n = pop.coding().n();
    if pop.design().m() != n {
        return Err(Error::Shape("next-best conditions need a just-identified design".into()));
    }
    let labels = pop
        .design()
        .exclusive_labels()
        .ok_or_else(|| Error::Shape("design support is not {0, e_1, ..., e_n}".into()))?;
    let mut monotonicity = Vec::new();
    let mut irrelevance = Vec::new();
    let mut next_best = Vec::new();
    for c in pop.types() {
        let mut s = vec![0usize; n + 1];
        for (j, &v) in labels.iter().enumerate() {
            s[v] = c.assignment.assignment[j];
        }
        let ind = |k: usize, v: usize| s[v] == k;
        monotonicity.push((1..=n).all(|k| ind(k, k) >= ind(k, 0)));
        irrelevance.push((1..=n).all(|k| ind(k, k) != ind(k, 0) || (0..=n).all(|l| ind(l, k) == ind(l, 0))));
        next_best.push(s[0] == 0 || s.windows(2).all(|w| w[0] == w[1]));
    }
    let holds = monotonicity.iter().chain(&irrelevance).chain(&next_best).all(|&b| b);
    Ok(KirkeboenCheck {
        monotonicity,
        irrelevance,
        next_best,
        holds,
    })
}
