#![allow(dead_code)]

use mtsls::design::{enumerate_response_types, InstrumentDesign, Population, TreatmentCoding, TypeComponent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_probs<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Random design with `j` points in `m` dimensions.
pub fn random_design<R: Rng>(rng: &mut R, j: usize, m: usize) -> InstrumentDesign {
    loop {
        let support: Vec<Vec<f64>> = (0..j)
            .map(|_| (0..m).map(|_| (rng.random_range(-20..=20) as f64) / 10.0).collect())
            .collect();
        if let Ok(d) = InstrumentDesign::new(support, random_probs(rng, j)) {
            return d;
        }
    }
}

/// Draws whose `Var(P)` has a larger condition number are redrawn. The exact
/// identities are checked at an absolute tolerance, and rounding error grows
/// with this condition number.
pub const MAX_COND: f64 = 1e4;

/// Random population: 3 to 6 support points, 3 to 4 treatments, unordered or
/// ordered coding, a random mixture of 3 to 10 types. Rank-deficient and
/// nearly rank-deficient draws are rejected.
pub fn random_population<R: Rng>(rng: &mut R) -> Population {
    loop {
        let j = rng.random_range(3..=6);
        let n_treat = rng.random_range(3..=4usize.min(j));
        let n = n_treat - 1;
        let m = rng.random_range(n..j);
        let design = random_design(rng, j, m);
        let coding = if rng.random_bool(0.5) {
            TreatmentCoding::unordered(n_treat)
        } else {
            TreatmentCoding::ordered(n_treat)
        };
        let k = rng.random_range(3..=10);
        let probs = random_probs(rng, k);
        let types = probs
            .into_iter()
            .map(|p| {
                let a = (0..j).map(|_| rng.random_range(0..n_treat)).collect();
                let beta = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                TypeComponent::new(a, p, beta, rng.random_range(-1.0..1.0))
            })
            .collect();
        let pop = Population::new(design, coding, types).expect("valid population");
        if let Ok(oracle) = mtsls::weights::WeightOracle::new(&pop) {
            if mtsls::linalg::condition_number(oracle.var_p()) <= MAX_COND {
                return pop;
            }
        }
    }
}

/// The 27 response types of the three-point, three-treatment design.
pub fn all_27() -> Vec<Vec<usize>> {
    let design = three_point_design();
    enumerate_response_types(&design, 3)
        .expect("27 types")
        .into_iter()
        .map(|s| s.assignment)
        .collect()
}

/// `{0, e_1, e_2}` with equal probabilities.
pub fn three_point_design() -> InstrumentDesign {
    InstrumentDesign::mutually_exclusive(2, vec![1.0 / 3.0; 3]).unwrap()
}

/// Never-takers, always-takers of each treatment, compliers into 1, into 2,
/// and full compliers: the proper-weight types under the identity labeling.
pub fn allowed_types() -> Vec<Vec<usize>> {
    vec![
        vec![0, 0, 0],
        vec![1, 1, 1],
        vec![2, 2, 2],
        vec![0, 1, 0],
        vec![0, 0, 2],
        vec![0, 1, 2],
    ]
}

pub fn population_of(assignments: &[(Vec<usize>, f64)]) -> mtsls::Result<Population> {
    let types = assignments
        .iter()
        .enumerate()
        .map(|(i, (a, p))| TypeComponent::new(a.clone(), *p, vec![1.0 + i as f64, -0.5 * i as f64], 0.0))
        .collect();
    Population::new(three_point_design(), TreatmentCoding::unordered(3), types)
}

/// Judges indexed by `x = u_1 + u_2` and `u_3` for independent fair coins:
/// conviction `0.5 + 0.1 x`, incarceration `0.1 + 0.05 (x + u_3)`. Both
/// `E[P_2 | P_1]` and `E[P_1 | P_2]` are affine (`E[x | x + u_3] = 2(x + u_3)/3`),
/// and `Var(P)` has full rank.
pub fn affine_judges() -> Vec<mtsls::dgp::Judge> {
    let mut out = Vec::new();
    for (x, px) in [(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)] {
        for u in [0.0, 1.0] {
            out.push(mtsls::dgp::Judge::new(0.5 + 0.1 * x, 0.1 + 0.05 * (x + u), px * 0.5));
        }
    }
    out
}

/// 25 judges with `inc = conv − conv²`.
pub fn quadratic_judges() -> Vec<mtsls::dgp::Judge> {
    (0..25)
        .map(|j| {
            let c = 0.3 + 0.6 * j as f64 / 24.0;
            mtsls::dgp::Judge::new(c, c - c * c, 1.0 / 25.0)
        })
        .collect()
}

/// 5 × 5 grid of independent conviction and incarceration rates.
pub fn grid_of_25() -> Vec<mtsls::dgp::Judge> {
    mtsls::dgp::grid_judges(&[0.5, 0.6, 0.7, 0.8, 0.9], &[0.1, 0.15, 0.2, 0.25, 0.3])
}

/// Effects that vary with the latent index.
pub fn sloped_effects() -> mtsls::dgp::EffectProfile {
    mtsls::dgp::EffectProfile {
        intercept: vec![1.0, 0.5],
        slope: vec![1.0, -0.5],
        y0: 0.0,
        y0_slope: 0.5,
    }
}
