//! Instrument designs, treatment codings, response types and populations.
//!
//! Indicator indices are zero-based in code: indicator `k` here is `D_{k+1}`
//! in the usual notation, and treatment labels run over `0..n_treatments`.

mod coding;
mod dataset;
mod population;

pub use coding::{CodingKind, CodingSpec, TreatmentCoding};
pub use dataset::Dataset;
pub use population::{Cell, CellPopulation, CellPopulationSpec, Population, PopulationSpec, TypeComponent};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability tolerance for sum-to-one checks.
pub const PROB_TOL: f64 = 1e-12;

/// Default cap on the number of enumerated response types.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Finite-support distribution of the instrument vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignSpec", into = "DesignSpec")]
pub struct InstrumentDesign {
    support: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSpec {
    pub support: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl TryFrom<DesignSpec> for InstrumentDesign {
    type Error = Error;
    fn try_from(s: DesignSpec) -> Result<Self> {
        InstrumentDesign::new(s.support, s.probs)
    }
}

impl From<InstrumentDesign> for DesignSpec {
    fn from(d: InstrumentDesign) -> Self {
        DesignSpec {
            support: d.support,
            probs: d.probs,
        }
    }
}

impl InstrumentDesign {
    pub fn new(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if support.len() < 2 {
            return Err(Error::InvalidDesign(format!(
                "need at least 2 support points, got {}",
                support.len()
            )));
        }
        if probs.len() != support.len() {
            return Err(Error::InvalidDesign(format!(
                "{} support points but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        let m = support[0].len();
        if m == 0 {
            return Err(Error::InvalidDesign("instrument dimension must be at least 1".into()));
        }
        for (j, z) in support.iter().enumerate() {
            if z.len() != m {
                return Err(Error::InvalidDesign(format!(
                    "support point {j} has dimension {}, expected {m}",
                    z.len()
                )));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDesign(format!("support point {j} is not finite")));
            }
        }
        check_probs(&probs).map_err(Error::InvalidDesign)?;
        for a in 0..support.len() {
            for b in (a + 1)..support.len() {
                if support[a] == support[b] {
                    return Err(Error::InvalidDesign(format!(
                        "support points {a} and {b} coincide"
                    )));
                }
            }
        }
        Ok(InstrumentDesign { support, probs })
    }

    /// Equal-probability design over the given points.
    pub fn uniform(support: Vec<Vec<f64>>) -> Result<Self> {
        let n = support.len().max(1);
        InstrumentDesign::new(support, vec![1.0 / n as f64; n])
    }

    /// Mutually exclusive binary instruments: support `{0, e_1, ..., e_m}`.
    /// Point `v` is the instrument value `V = v`.
    pub fn mutually_exclusive(m: usize, probs: Vec<f64>) -> Result<Self> {
        let support = (0..=m)
            .map(|v| (0..m).map(|i| if v == i + 1 { 1.0 } else { 0.0 }).collect())
            .collect();
        InstrumentDesign::new(support, probs)
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Instrument dimension.
    pub fn m(&self) -> usize {
        self.support[0].len()
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Support as a `J × m` matrix.
    pub fn matrix(&self) -> nalgebra::DMatrix<f64> {
        crate::linalg::from_rows(&self.support)
    }

    /// If the support is exactly `{0, e_1, ..., e_m}` in some order, the
    /// instrument value `v` of each support point (zero vector is `v = 0`).
    pub fn exclusive_labels(&self) -> Option<Vec<usize>> {
        let m = self.m();
        if self.len() != m + 1 {
            return None;
        }
        let mut labels = Vec::with_capacity(self.len());
        let mut seen = vec![false; m + 1];
        for z in &self.support {
            let ones: Vec<usize> = (0..m).filter(|&i| z[i] == 1.0).collect();
            let zeros = z.iter().filter(|&&v| v == 0.0).count();
            let v = match (ones.len(), zeros) {
                (0, c) if c == m => 0,
                (1, c) if c == m - 1 => ones[0] + 1,
                _ => return None,
            };
            if seen[v] {
                return None;
            }
            seen[v] = true;
            labels.push(v);
        }
        Some(labels)
    }
}

pub(crate) fn check_probs(probs: &[f64]) -> std::result::Result<(), String> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("probabilities must be finite and non-negative".into());
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(format!("probabilities sum to {total}, not 1"));
    }
    Ok(())
}

/// A total map from design support points to treatments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseType {
    pub assignment: Vec<usize>,
}

impl ResponseType {
    pub fn new(assignment: Vec<usize>) -> Self {
        ResponseType { assignment }
    }

    /// Binary indicator vector `v_s(z)` at every support point: entry
    /// `[j][k]` is `1[s(z_j) ∈ R_k]`.
    pub fn indicator_path(&self, coding: &TreatmentCoding) -> Vec<Vec<f64>> {
        self.assignment.iter().map(|&t| coding.indicators(t)).collect()
    }

    /// Same type selects the same treatment at every support point.
    pub fn is_constant(&self) -> bool {
        self.assignment.windows(2).all(|w| w[0] == w[1])
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Compact label such as `(2,1,2)`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.assignment.iter().map(|t| t.to_string()).collect();
        format!("({})", parts.join(","))
    }
}

impl std::fmt::Display for ResponseType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Indicator path of a type under a coding; free-function form.
pub fn indicator_path(s: &ResponseType, coding: &TreatmentCoding) -> Vec<Vec<f64>> {
    s.indicator_path(coding)
}

/// All `n_treatments^|support|` response types, lexicographic by assignment.
pub fn enumerate_response_types(
    design: &InstrumentDesign,
    n_treatments: usize,
) -> Result<Vec<ResponseType>> {
    enumerate_response_types_capped(design, n_treatments, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_response_types_capped(
    design: &InstrumentDesign,
    n_treatments: usize,
    cap: usize,
) -> Result<Vec<ResponseType>> {
    let j = design.len();
    let count = (n_treatments as f64).powi(j as i32);
    if count > cap as f64 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    if n_treatments == 0 {
        return Ok(Vec::new());
    }
    let total = count as usize;
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0usize; j];
    for _ in 0..total {
        out.push(ResponseType::new(current.clone()));
        for pos in (0..j).rev() {
            current[pos] += 1;
            if current[pos] < n_treatments {
                break;
            }
            current[pos] = 0;
        }
    }
    Ok(out)
}
