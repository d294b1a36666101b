use std::path::Path;

use mtsls::design::CodingSpec;
use mtsls::dgp::{build_judge_design, build_threshold_crossing_population, EffectProfile, JudgeDesign, ThresholdDesign};
use mtsls::{CellPopulation, Population, TreatmentCoding};
use serde::{Deserialize, Serialize};

use crate::error::{lib, CliError, CliResult};

/// Threshold-crossing design plus the effect profile along the latent index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub design: ThresholdDesign,
    pub effects: EffectProfile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinsConfig {
    Count(usize),
    Explicit(Vec<(f64, f64)>),
}

/// Contents of a `--config` file. Exactly one population source is used by
/// `simulate`, `diagnose` and `decompose`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding: Option<CodingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<Population>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<CellPopulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judges: Option<JudgeDesign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdConfig>,
    /// Sample size for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Outcome noise standard deviation for `simulate` (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<BinsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }
}

/// The population a config describes.
pub enum Source {
    Single(Population),
    Cells(CellPopulation),
}

impl Source {
    pub fn coding(&self) -> &TreatmentCoding {
        match self {
            Source::Single(p) => p.coding(),
            Source::Cells(c) => c.coding(),
        }
    }
}

pub fn population_source(cfg: &ConfigFile, origin: &str) -> CliResult<Source> {
    let given = [
        cfg.population.is_some(),
        cfg.cells.is_some(),
        cfg.judges.is_some(),
        cfg.threshold.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if given != 1 {
        return Err(CliError::invalid(format!(
            "{origin}: give exactly one of population, cells, judges, threshold (found {given})"
        )));
    }
    if let Some(p) = &cfg.population {
        return Ok(Source::Single(p.clone()));
    }
    if let Some(c) = &cfg.cells {
        return Ok(Source::Cells(c.clone()));
    }
    if let Some(j) = &cfg.judges {
        return build_judge_design(j).map(Source::Single).map_err(lib(origin));
    }
    let t = cfg.threshold.as_ref().expect("one source is present");
    build_threshold_crossing_population(&t.design, &t.effects)
        .map(Source::Single)
        .map_err(lib(origin))
}
