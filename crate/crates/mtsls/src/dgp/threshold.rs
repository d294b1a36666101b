//! Single latent index crossing instrument-dependent thresholds.
//!
//! With cutoffs `g_1(z) < … < g_n(z)` a unit with index `u` takes
//! `T = #{k : u ≥ g_k(z)}`, so `D_k = 1[u ≥ g_k(z)]` under ordered coding and
//! `P_k(z) = Pr[U ≥ g_k(z)]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::design::{InstrumentDesign, Population, TreatmentCoding, TypeComponent};
use crate::error::{Error, Result};

/// Distribution of the latent index on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatentGrid {
    /// Finitely many index values. Uniform weights when `probs` is absent.
    Points {
        values: Vec<f64>,
        #[serde(default)]
        probs: Option<Vec<f64>>,
    },
    /// Continuous uniform index; one type per interval between cutoffs.
    Exact,
}

impl Default for LatentGrid {
    fn default() -> Self {
        LatentGrid::uniform_points(1001)
    }
}

impl LatentGrid {
    /// `count` equally likely points `i / (count − 1)`.
    pub fn uniform_points(count: usize) -> Self {
        let d = (count.max(2) - 1) as f64;
        LatentGrid::Points {
            values: (0..count.max(2)).map(|i| i as f64 / d).collect(),
            probs: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let LatentGrid::Points { values, probs } = self {
            if values.is_empty() {
                return Err(Error::InvalidDesign("latent grid is empty".into()));
            }
            if values.iter().any(|u| !(0.0..=1.0).contains(u)) {
                return Err(Error::InvalidDesign("latent grid points must lie in [0, 1]".into()));
            }
            if let Some(p) = probs {
                if p.len() != values.len() {
                    return Err(Error::InvalidDesign("latent grid probabilities do not match points".into()));
                }
                crate::design::check_probs(p).map_err(|e| Error::InvalidDesign(format!("latent grid {e}")))?;
            }
        }
        Ok(())
    }
}

/// Mean effects and baseline as affine functions of the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectProfile {
    pub intercept: Vec<f64>,
    #[serde(default)]
    pub slope: Vec<f64>,
    #[serde(default)]
    pub y0: f64,
    #[serde(default)]
    pub y0_slope: f64,
}

impl EffectProfile {
    pub fn constant(beta: Vec<f64>) -> Self {
        EffectProfile {
            intercept: beta,
            slope: Vec::new(),
            y0: 0.0,
            y0_slope: 0.0,
        }
    }

    pub fn at(&self, u: f64) -> (Vec<f64>, f64) {
        let beta = self
            .intercept
            .iter()
            .enumerate()
            .map(|(k, a)| a + self.slope.get(k).copied().unwrap_or(0.0) * u)
            .collect();
        (beta, self.y0 + self.y0_slope * u)
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        if self.intercept.len() != n || (!self.slope.is_empty() && self.slope.len() != n) {
            return Err(Error::InvalidInput(format!("effect profile needs {n} effects")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub instrument: InstrumentDesign,
    /// One row of `n` increasing cutoffs per support point.
    pub cutoffs: Vec<Vec<f64>>,
    #[serde(default)]
    pub grid: LatentGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdSpec", into = "ThresholdSpec")]
pub struct ThresholdDesign {
    instrument: InstrumentDesign,
    cutoffs: Vec<Vec<f64>>,
    grid: LatentGrid,
}

impl TryFrom<ThresholdSpec> for ThresholdDesign {
    type Error = Error;
    fn try_from(s: ThresholdSpec) -> Result<Self> {
        ThresholdDesign::new(s.instrument, s.cutoffs)?.with_grid(s.grid)
    }
}

impl From<ThresholdDesign> for ThresholdSpec {
    fn from(d: ThresholdDesign) -> Self {
        ThresholdSpec {
            instrument: d.instrument,
            cutoffs: d.cutoffs,
            grid: d.grid,
        }
    }
}

impl ThresholdDesign {
    pub fn new(instrument: InstrumentDesign, cutoffs: Vec<Vec<f64>>) -> Result<Self> {
        if cutoffs.len() != instrument.len() {
            return Err(Error::InvalidDesign(format!(
                "{} cutoff rows for {} support points",
                cutoffs.len(),
                instrument.len()
            )));
        }
        let n = cutoffs[0].len();
        if n == 0 {
            return Err(Error::InvalidDesign("cutoff rows are empty".into()));
        }
        for (j, row) in cutoffs.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidDesign(format!("cutoff row {j} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|g| !(0.0..=1.0).contains(g)) {
                return Err(Error::InvalidDesign(format!("cutoff row {j} leaves [0, 1]")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidDesign(format!("cutoff row {j} is not strictly increasing")));
            }
        }
        Ok(ThresholdDesign {
            instrument,
            cutoffs,
            grid: LatentGrid::default(),
        })
    }

    /// Cutoffs from target treatment rates under a uniform index:
    /// `g_k(z) = 1 − rate_k(z)`. Rates must strictly decrease in `k`.
    pub fn from_rates(instrument: InstrumentDesign, rates: &[Vec<f64>]) -> Result<Self> {
        let cutoffs = rates.iter().map(|r| r.iter().map(|p| 1.0 - p).collect()).collect();
        ThresholdDesign::new(instrument, cutoffs)
    }

    pub fn with_grid(mut self, grid: LatentGrid) -> Result<Self> {
        grid.validate()?;
        self.grid = grid;
        Ok(self)
    }

    pub fn instrument(&self) -> &InstrumentDesign {
        &self.instrument
    }

    pub fn cutoffs(&self) -> &[Vec<f64>] {
        &self.cutoffs
    }

    pub fn grid(&self) -> &LatentGrid {
        &self.grid
    }

    /// Number of treatment indicators.
    pub fn n(&self) -> usize {
        self.cutoffs[0].len()
    }
}

/// Index pieces: `(representative u, probability)`.
pub(crate) fn latent_pieces(grid: &LatentGrid, cutoffs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    match grid {
        LatentGrid::Points { values, probs } => {
            let p = 1.0 / values.len() as f64;
            values
                .iter()
                .enumerate()
                .map(|(i, &u)| (u, probs.as_ref().map_or(p, |ps| ps[i])))
                .collect()
        }
        LatentGrid::Exact => {
            let mut cuts: Vec<f64> = vec![0.0, 1.0];
            cuts.extend(cutoffs.iter().flatten().copied());
            cuts.sort_by(|a, b| a.total_cmp(b));
            // Cutoffs computed from rates can differ by rounding only.
            cuts.dedup_by(|b, a| (*b - *a).abs() <= 1e-12);
            cuts.windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| ((w[0] + w[1]) / 2.0, w[1] - w[0]))
                .collect()
        }
    }
}

/// Map index pieces to response types, merging pieces with the same type.
/// Effects are evaluated at each piece's representative value, which is the
/// exact interval mean for affine profiles.
pub(crate) fn induced_types(
    cutoffs: &[Vec<f64>],
    pieces: &[(f64, f64)],
    effects: &EffectProfile,
    mass: f64,
) -> Vec<TypeComponent> {
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut out: Vec<TypeComponent> = Vec::new();
    for &(u, p) in pieces {
        if p <= 0.0 {
            continue;
        }
        let assignment: Vec<usize> = cutoffs.iter().map(|row| row.iter().filter(|&&g| u >= g).count()).collect();
        let (beta, y0) = effects.at(u);
        let p = p * mass;
        match index.get(&assignment) {
            Some(&i) => {
                let c = &mut out[i];
                let total = c.prob + p;
                for (b, nb) in c.beta.iter_mut().zip(&beta) {
                    *b = (*b * c.prob + nb * p) / total;
                }
                c.y0 = (c.y0 * c.prob + y0 * p) / total;
                c.prob = total;
            }
            None => {
                index.insert(assignment.clone(), out.len());
                out.push(TypeComponent::new(assignment, p, beta, y0));
            }
        }
    }
    out
}

/// Population of threshold-crossing types under ordered coding with
/// `n + 1` treatments.
pub fn build_threshold_crossing_population(design: &ThresholdDesign, effects: &EffectProfile) -> Result<Population> {
    let n = design.n();
    effects.check(n)?;
    let pieces = latent_pieces(&design.grid, &design.cutoffs);
    let types = induced_types(&design.cutoffs, &pieces, effects, 1.0);
    Population::new(design.instrument.clone(), TreatmentCoding::ordered(n + 1), types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::PopulationMoments;

    fn judges(count: usize) -> InstrumentDesign {
        InstrumentDesign::mutually_exclusive(count - 1, vec![1.0 / count as f64; count]).unwrap()
    }

    #[test]
    fn identical_cutoffs_give_constant_types() {
        let d = ThresholdDesign::new(judges(2), vec![vec![0.3, 0.6], vec![0.3, 0.6]]).unwrap();
        let pop = build_threshold_crossing_population(&d, &EffectProfile::constant(vec![1.0, 1.0])).unwrap();
        assert!(pop.types().iter().all(|c| c.assignment.is_constant()));
        let err = crate::estimator::tsls_population(&pop).unwrap_err();
        assert!(err.to_string().starts_with("Assumption 2"));
    }

    #[test]
    fn exact_grid_reproduces_rates() {
        let rates = vec![vec![0.5, 0.1], vec![0.7, 0.3], vec![0.6, 0.2]];
        let d = ThresholdDesign::from_rates(judges(3), &rates)
            .unwrap()
            .with_grid(LatentGrid::Exact)
            .unwrap();
        let pop = build_threshold_crossing_population(&d, &EffectProfile::constant(vec![0.0, 0.0])).unwrap();
        let mom = PopulationMoments::new(&pop);
        for (j, r) in rates.iter().enumerate() {
            for k in 0..2 {
                assert!((mom.d_given_z[(j, k)] - r[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merged_points_keep_outcome_means() {
        let d = ThresholdDesign::new(judges(2), vec![vec![0.25, 0.75], vec![0.5, 0.8]])
            .unwrap()
            .with_grid(LatentGrid::uniform_points(101))
            .unwrap();
        let effects = EffectProfile {
            intercept: vec![1.0, 2.0],
            slope: vec![3.0, -1.0],
            y0: 0.5,
            y0_slope: 1.0,
        };
        let pop = build_threshold_crossing_population(&d, &effects).unwrap();
        // Unmerged mean outcome at each support point.
        let mut direct = [0.0; 2];
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            let (b, y0) = effects.at(u);
            for (j, row) in d.cutoffs().iter().enumerate() {
                let dk: Vec<f64> = row.iter().map(|&g| if u >= g { 1.0 } else { 0.0 }).collect();
                direct[j] += (y0 + dk[0] * b[0] + dk[1] * b[1]) / 101.0;
            }
        }
        let merged = pop.mean_outcome();
        for j in 0..2 {
            assert!((merged[j] - direct[j]).abs() < 1e-12);
        }
        assert!(pop.types().len() < 101);
    }

    #[test]
    fn rejects_bad_cutoffs() {
        assert!(ThresholdDesign::new(judges(2), vec![vec![0.6, 0.3], vec![0.1, 0.2]]).is_err());
        assert!(ThresholdDesign::new(judges(2), vec![vec![0.1, 1.2], vec![0.1, 0.2]]).is_err());
        assert!(ThresholdDesign::new(judges(2), vec![vec![0.1, 0.2]]).is_err());
    }
}
