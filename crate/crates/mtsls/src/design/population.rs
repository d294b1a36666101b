use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_probs, InstrumentDesign, ResponseType, TreatmentCoding};
use crate::error::{Error, Result};

/// One response type in a population mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeComponent {
    pub assignment: ResponseType,
    pub prob: f64,
    /// Mean effects `β^s`, one per indicator.
    pub beta: Vec<f64>,
    /// Baseline mean `E[Y(0) | s]` (more generally the intercept `α`).
    #[serde(default)]
    pub y0: f64,
    /// Probability that a member of this type carries each named flag.
    /// Flags depend on the type only, never on the instrument.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, f64>,
}

impl TypeComponent {
    pub fn new(assignment: Vec<usize>, prob: f64, beta: Vec<f64>, y0: f64) -> Self {
        TypeComponent {
            assignment: ResponseType::new(assignment),
            prob,
            beta,
            y0,
            flags: BTreeMap::new(),
        }
    }

    pub fn with_flag(mut self, name: &str, prob: f64) -> Self {
        self.flags.insert(name.to_string(), prob);
        self
    }
}

/// JSON form of a population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub design: InstrumentDesign,
    pub coding: TreatmentCoding,
    pub types: Vec<TypeComponent>,
}

/// Mixture of response types over a common instrument design. `Z` is
/// independent of the type by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PopulationSpec", into = "PopulationSpec")]
pub struct Population {
    design: InstrumentDesign,
    coding: TreatmentCoding,
    types: Vec<TypeComponent>,
}

impl TryFrom<PopulationSpec> for Population {
    type Error = Error;
    fn try_from(s: PopulationSpec) -> Result<Self> {
        Population::new(s.design, s.coding, s.types)
    }
}

impl From<Population> for PopulationSpec {
    fn from(p: Population) -> Self {
        PopulationSpec {
            design: p.design,
            coding: p.coding,
            types: p.types,
        }
    }
}

impl Population {
    pub fn new(design: InstrumentDesign, coding: TreatmentCoding, types: Vec<TypeComponent>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InvalidPopulation("no response types".into()));
        }
        let n = coding.n();
        for (i, c) in types.iter().enumerate() {
            if c.assignment.len() != design.len() {
                return Err(Error::InvalidPopulation(format!(
                    "type {i} assigns {} support points, design has {}",
                    c.assignment.len(),
                    design.len()
                )));
            }
            if let Some(t) = c.assignment.assignment.iter().find(|&&t| t >= coding.n_treatments()) {
                return Err(Error::InvalidPopulation(format!(
                    "type {i} selects treatment {t}, only {} treatments exist",
                    coding.n_treatments()
                )));
            }
            if c.beta.len() != n {
                return Err(Error::InvalidPopulation(format!(
                    "type {i} has {} effects, coding has {n} indicators",
                    c.beta.len()
                )));
            }
            if c.beta.iter().any(|b| !b.is_finite()) || !c.y0.is_finite() {
                return Err(Error::InvalidPopulation(format!("type {i} has non-finite effects")));
            }
            for (name, p) in &c.flags {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidPopulation(format!(
                        "type {i} flag {name} has probability {p}"
                    )));
                }
            }
        }
        let probs: Vec<f64> = types.iter().map(|c| c.prob).collect();
        check_probs(&probs).map_err(|e| Error::InvalidPopulation(format!("type {e}")))?;
        Ok(Population { design, coding, types })
    }

    pub fn design(&self) -> &InstrumentDesign {
        &self.design
    }

    pub fn coding(&self) -> &TreatmentCoding {
        &self.coding
    }

    pub fn types(&self) -> &[TypeComponent] {
        &self.types
    }

    /// Same design and coding with new types.
    pub fn with_types(&self, types: Vec<TypeComponent>) -> Result<Self> {
        Population::new(self.design.clone(), self.coding.clone(), types)
    }

    /// `v_s(z_j)` stacked as a `J × n` matrix for type `i`.
    pub fn indicator_matrix(&self, i: usize) -> DMatrix<f64> {
        let path = self.types[i].assignment.indicator_path(&self.coding);
        crate::linalg::from_rows(&path)
    }

    /// `E[D | Z = z_j]` as a `J × n` matrix.
    pub fn mean_indicators(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.design.len(), self.coding.n());
        for (i, c) in self.types.iter().enumerate() {
            out += self.indicator_matrix(i) * c.prob;
        }
        out
    }

    /// `E[Y | Z = z_j]` as a length-`J` vector.
    pub fn mean_outcome(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.design.len());
        for (i, c) in self.types.iter().enumerate() {
            let v = self.indicator_matrix(i);
            let beta = DVector::from_column_slice(&c.beta);
            let y = v * beta;
            for j in 0..out.len() {
                out[j] += c.prob * (c.y0 + y[j]);
            }
        }
        out
    }

    /// Probability that a unit carries the named flag.
    pub fn flag_share(&self, name: &str) -> f64 {
        self.types
            .iter()
            .map(|c| c.prob * c.flags.get(name).copied().unwrap_or(0.0))
            .sum()
    }

    /// Population of the units carrying (`value = true`) or not carrying the
    /// named flag, with type probabilities renormalized.
    pub fn flag_subpopulation(&self, name: &str, value: bool) -> Result<Self> {
        let mut types: Vec<TypeComponent> = self
            .types
            .iter()
            .map(|c| {
                let f = c.flags.get(name).copied().unwrap_or(0.0);
                let mut c = c.clone();
                c.prob *= if value { f } else { 1.0 - f };
                c
            })
            .filter(|c| c.prob > 0.0)
            .collect();
        let total: f64 = types.iter().map(|c| c.prob).sum();
        if total <= 0.0 {
            return Err(Error::InvalidPopulation(format!("flag {name} selects nobody")));
        }
        for c in &mut types {
            c.prob /= total;
        }
        renormalize(&mut types);
        self.with_types(types)
    }
}

/// Push rounding residue onto the largest component so probabilities sum
/// to one within tolerance.
pub(crate) fn renormalize(types: &mut [TypeComponent]) {
    let total: f64 = types.iter().map(|c| c.prob).sum();
    if let Some(big) = types
        .iter_mut()
        .max_by(|a, b| a.prob.partial_cmp(&b.prob).unwrap_or(std::cmp::Ordering::Equal))
    {
        big.prob += 1.0 - total;
    }
}

/// A covariate cell with its own design and type mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub prob: f64,
    pub design: InstrumentDesign,
    pub types: Vec<TypeComponent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellPopulationSpec {
    pub coding: TreatmentCoding,
    pub cells: Vec<Cell>,
}

/// Population stratified by a discrete covariate `X`. All cells share the
/// coding and the instrument dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CellPopulationSpec", into = "CellPopulationSpec")]
pub struct CellPopulation {
    coding: TreatmentCoding,
    cells: Vec<Cell>,
    populations: Vec<Population>,
}

impl TryFrom<CellPopulationSpec> for CellPopulation {
    type Error = Error;
    fn try_from(s: CellPopulationSpec) -> Result<Self> {
        CellPopulation::new(s.coding, s.cells)
    }
}

impl From<CellPopulation> for CellPopulationSpec {
    fn from(p: CellPopulation) -> Self {
        CellPopulationSpec {
            coding: p.coding,
            cells: p.cells,
        }
    }
}

impl CellPopulation {
    pub fn new(coding: TreatmentCoding, cells: Vec<Cell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidPopulation("no cells".into()));
        }
        let m = cells[0].design.m();
        let mut populations = Vec::with_capacity(cells.len());
        for c in &cells {
            if c.design.m() != m {
                return Err(Error::InvalidPopulation(format!(
                    "cell {} has instrument dimension {}, expected {m}",
                    c.label,
                    c.design.m()
                )));
            }
            let pop = Population::new(c.design.clone(), coding.clone(), c.types.clone())
                .map_err(|e| Error::InvalidPopulation(format!("cell {}: {e}", c.label)))?;
            populations.push(pop);
        }
        let probs: Vec<f64> = cells.iter().map(|c| c.prob).collect();
        check_probs(&probs).map_err(|e| Error::InvalidPopulation(format!("cell {e}")))?;
        let mut labels: Vec<&str> = cells.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != cells.len() {
            return Err(Error::InvalidPopulation("cell labels must be distinct".into()));
        }
        Ok(CellPopulation {
            coding,
            cells,
            populations,
        })
    }

    /// A single cell holding the whole population.
    pub fn single(pop: &Population) -> Self {
        let cell = Cell {
            label: "all".into(),
            prob: 1.0,
            design: pop.design().clone(),
            types: pop.types().to_vec(),
        };
        CellPopulation::new(pop.coding().clone(), vec![cell]).expect("valid population")
    }

    pub fn coding(&self) -> &TreatmentCoding {
        &self.coding
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Conditional population of cell `x`.
    pub fn population(&self, x: usize) -> &Population {
        &self.populations[x]
    }

    pub fn m(&self) -> usize {
        self.cells[0].design.m()
    }
}
