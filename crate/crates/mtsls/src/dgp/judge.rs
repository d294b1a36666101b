//! Random-judge designs with acquit / convict / incarcerate decisions.
//!
//! Instruments are judge dummies (judge 0 is the reference), so the
//! predicted treatments are the judges' conviction and incarceration rates.
//! Explicit case types carry one decision letter per judge; the remaining
//! probability mass is filled with single-index background types chosen so
//! that every judge's rates come out exactly as specified.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::threshold::{induced_types, latent_pieces, EffectProfile, LatentGrid};
use crate::design::{check_probs, InstrumentDesign, Population, TreatmentCoding, TypeComponent};
use crate::error::{Error, Result};

const RATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judge {
    pub conviction: f64,
    pub incarceration: f64,
    pub prob: f64,
}

impl Judge {
    pub fn new(conviction: f64, incarceration: f64, prob: f64) -> Self {
        Judge {
            conviction,
            incarceration,
            prob,
        }
    }
}

/// A case type decided explicitly judge by judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseType {
    /// One of `A`, `C`, `I` per judge.
    pub decisions: String,
    pub prob: f64,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub y0: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, f64>,
}

impl CaseType {
    pub fn new(decisions: &str, prob: f64, beta: Vec<f64>) -> Self {
        CaseType {
            decisions: decisions.to_string(),
            prob,
            beta,
            y0: 0.0,
            flags: BTreeMap::new(),
        }
    }

    pub fn with_flag(mut self, name: &str, prob: f64) -> Self {
        self.flags.insert(name.to_string(), prob);
        self
    }

    fn treatments(&self) -> Result<Vec<usize>> {
        self.decisions
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'A' => Ok(0),
                'C' => Ok(1),
                'I' => Ok(2),
                other => Err(Error::InvalidPopulation(format!("unknown decision letter {other:?}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeDesign {
    pub judges: Vec<Judge>,
    #[serde(default)]
    pub casetypes: Vec<CaseType>,
    /// Effects of background types as a function of case strength.
    pub background: EffectProfile,
    /// Flag probabilities shared by all background types.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub background_flags: BTreeMap<String, f64>,
}

impl JudgeDesign {
    pub fn new(judges: Vec<Judge>, background: EffectProfile) -> Self {
        JudgeDesign {
            judges,
            casetypes: Vec::new(),
            background,
            background_flags: BTreeMap::new(),
        }
    }

    pub fn with_casetype(mut self, c: CaseType) -> Self {
        self.casetypes.push(c);
        self
    }

    pub fn with_background_flag(mut self, name: &str, prob: f64) -> Self {
        self.background_flags.insert(name.to_string(), prob);
        self
    }

    /// Judge indicators: judge 0 at the origin, judge `j` at `e_j`.
    pub fn instrument(&self) -> Result<InstrumentDesign> {
        let count = self.judges.len();
        if count < 2 {
            return Err(Error::Rank("a single judge gives the instrument no variation".into()));
        }
        InstrumentDesign::mutually_exclusive(count - 1, self.judges.iter().map(|j| j.prob).collect())
    }
}

/// Judges on a rectangular grid of conviction × incarceration rates, equally
/// likely, listed with conviction rate varying slowest.
pub fn grid_judges(conviction: &[f64], incarceration: &[f64]) -> Vec<Judge> {
    let p = 1.0 / (conviction.len() * incarceration.len()) as f64;
    conviction
        .iter()
        .flat_map(|&c| incarceration.iter().map(move |&i| Judge::new(c, i, p)))
        .collect()
}

pub fn build_judge_design(design: &JudgeDesign) -> Result<Population> {
    let judges = &design.judges;
    let instrument = design.instrument()?;
    let probs: Vec<f64> = judges.iter().map(|j| j.prob).collect();
    check_probs(&probs).map_err(|e| Error::InvalidPopulation(format!("judge {e}")))?;
    design.background.check(2)?;
    for (i, j) in judges.iter().enumerate() {
        if !(0.0..=1.0).contains(&j.conviction) || !(0.0..=j.conviction).contains(&j.incarceration) {
            return Err(Error::InvalidPopulation(format!(
                "judge {i}: need 0 ≤ incarceration ≤ conviction ≤ 1, got ({}, {})",
                j.conviction, j.incarceration
            )));
        }
    }

    let mut types = Vec::new();
    let mut explicit = vec![[0.0f64; 2]; judges.len()];
    let mut mass = 0.0;
    for (c_idx, c) in design.casetypes.iter().enumerate() {
        let t = c.treatments()?;
        if t.len() != judges.len() {
            return Err(Error::InvalidPopulation(format!(
                "case type {c_idx} has {} decisions for {} judges",
                t.len(),
                judges.len()
            )));
        }
        if c.beta.len() != 2 {
            return Err(Error::InvalidPopulation(format!("case type {c_idx} needs 2 effects")));
        }
        if !(c.prob > 0.0) {
            return Err(Error::InvalidPopulation(format!("case type {c_idx} has probability {}", c.prob)));
        }
        for (j, &tj) in t.iter().enumerate() {
            explicit[j][0] += c.prob * (tj >= 1) as u8 as f64;
            explicit[j][1] += c.prob * (tj >= 2) as u8 as f64;
        }
        mass += c.prob;
        let mut comp = TypeComponent::new(t, c.prob, c.beta.clone(), c.y0);
        comp.flags = c.flags.clone();
        types.push(comp);
    }
    if mass > 1.0 + RATE_TOL {
        return Err(Error::InvalidPopulation(format!("case types carry probability {mass} > 1")));
    }

    let rest = 1.0 - mass;
    let mut cutoffs = Vec::with_capacity(judges.len());
    for (j, judge) in judges.iter().enumerate() {
        let target = [judge.conviction, judge.incarceration];
        let mut row = [0.0; 2];
        for k in 0..2 {
            let r = if rest > RATE_TOL { (target[k] - explicit[j][k]) / rest } else { 0.0 };
            if rest <= RATE_TOL && (target[k] - explicit[j][k]).abs() > RATE_TOL {
                return Err(Error::InvalidPopulation(format!(
                    "judge {j}: case types fix rate {} but {} was requested",
                    explicit[j][k], target[k]
                )));
            }
            if !(-RATE_TOL..=1.0 + RATE_TOL).contains(&r) {
                return Err(Error::InvalidPopulation(format!(
                    "judge {j}: case types leave an impossible background rate {r}"
                )));
            }
            row[k] = r.clamp(0.0, 1.0);
        }
        if row[1] > row[0] + RATE_TOL {
            return Err(Error::InvalidPopulation(format!(
                "judge {j}: case types leave background incarceration above conviction"
            )));
        }
        cutoffs.push(vec![1.0 - row[0], 1.0 - row[1].min(row[0])]);
    }
    if rest > RATE_TOL {
        let pieces = latent_pieces(&LatentGrid::Exact, &cutoffs);
        for mut c in induced_types(&cutoffs, &pieces, &design.background, rest) {
            c.flags = design.background_flags.clone();
            types.push(c);
        }
    }
    Population::new(instrument, TreatmentCoding::ordered(3), types)
}
