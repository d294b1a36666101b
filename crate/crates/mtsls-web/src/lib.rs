//! Browser bindings. Each export takes a JSON string and returns a JSON
//! string; the plain `*_json` functions carry the logic and are what the
//! native tests call.

use mtsls::design::{InstrumentDesign, TreatmentCoding, TypeComponent};
use mtsls::dgp::{build_judge_design, build_threshold_crossing_population, EffectProfile, Judge, JudgeDesign, LatentGrid, ThresholdDesign};
use mtsls::spec_tests::{linearity_test_population, LinearityOptions};
use mtsls::weights::{identification_report, Violation};
use mtsls::{tsls_population, Population};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn parse<T: for<'de> Deserialize<'de>>(input: &str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("input: {e}"))
}

fn render<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn err(e: mtsls::Error) -> String {
    e.to_string()
}

#[derive(Deserialize)]
struct JudgeInput {
    judges: Vec<Judge>,
    #[serde(default)]
    effects: Option<EffectProfile>,
}

#[derive(Serialize)]
struct JudgeOutput {
    proper: bool,
    acm: bool,
    nce: bool,
    types: usize,
    estimand: Vec<f64>,
    /// Largest violations, at most five.
    violations: Vec<Violation>,
    /// Predicted treatments per judge.
    predicted: Vec<Vec<f64>>,
}

pub fn judge_weights_json(input: &str) -> Result<String, String> {
    let input: JudgeInput = parse(input)?;
    let effects = input.effects.unwrap_or(EffectProfile {
        intercept: vec![1.0, 0.5],
        slope: vec![1.0, -0.5],
        y0: 0.0,
        y0_slope: 0.5,
    });
    let pop = build_judge_design(&JudgeDesign::new(input.judges, effects)).map_err(err)?;
    let report = identification_report(&pop).map_err(err)?;
    let est = tsls_population(&pop).map_err(err)?;
    let predicted = pop.mean_indicators();
    render(&JudgeOutput {
        proper: report.proper,
        acm: report.acm_pass,
        nce: report.nce_pass,
        types: pop.types().len(),
        estimand: est.beta_hat,
        violations: report.violations.into_iter().take(5).collect(),
        predicted: (0..predicted.nrows()).map(|j| predicted.row(j).iter().copied().collect()).collect(),
    })
}

#[derive(Deserialize)]
struct ThresholdInput {
    /// `[P_1, P_2]` take-up rates per instrument value.
    rates: Vec<Vec<f64>>,
    #[serde(default)]
    probs: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Direction {
    given: usize,
    f: f64,
    gap: Option<f64>,
    slope: f64,
    intercept: f64,
}

#[derive(Serialize)]
struct ThresholdOutput {
    proper: bool,
    worst: Option<Violation>,
    linearity: Vec<Direction>,
}

pub fn threshold_linearity_json(input: &str) -> Result<String, String> {
    let input: ThresholdInput = parse(input)?;
    let design = match input.probs {
        Some(p) => InstrumentDesign::new(input.rates.clone(), p),
        None => InstrumentDesign::uniform(input.rates.clone()),
    }
    .map_err(err)?;
    let td = ThresholdDesign::from_rates(design, &input.rates)
        .and_then(|d| d.with_grid(LatentGrid::Exact))
        .map_err(err)?;
    let n = td.n();
    let pop = build_threshold_crossing_population(&td, &EffectProfile::constant(vec![1.0; n])).map_err(err)?;
    let report = identification_report(&pop).map_err(err)?;
    let mut linearity = Vec::new();
    if n == 2 {
        for (k, l) in [(1, 0), (0, 1)] {
            let r = linearity_test_population(&pop, &LinearityOptions::new(k, l), 1e4).map_err(err)?;
            let reset = &r.reset[0];
            linearity.push(Direction {
                given: l + 1,
                f: reset.f,
                gap: reset.conditional_gap,
                slope: reset.slope,
                intercept: reset.intercept,
            });
        }
    }
    render(&ThresholdOutput {
        proper: report.proper,
        worst: report.violations.first().cloned(),
        linearity,
    })
}

#[derive(Deserialize)]
struct ExampleInput {
    /// Response types as treatments at `(0,0)`, `(1,0)`, `(0,1)`.
    types: Vec<(Vec<usize>, f64)>,
}

#[derive(Serialize)]
struct ExampleType {
    assignment: Vec<usize>,
    prob: f64,
    weights: Vec<Vec<f64>>,
    proper: bool,
}

#[derive(Serialize)]
struct ExampleOutput {
    intercepts: Vec<f64>,
    slopes: Vec<Vec<f64>>,
    types: Vec<ExampleType>,
}

/// Three equally likely instrument values `(0,0)`, `(1,0)`, `(0,1)` and
/// three treatments under unordered coding.
pub fn three_point_json(input: &str) -> Result<String, String> {
    let input: ExampleInput = parse(input)?;
    let design = InstrumentDesign::mutually_exclusive(2, vec![1.0 / 3.0; 3]).map_err(err)?;
    let types = input
        .types
        .into_iter()
        .map(|(a, p)| TypeComponent::new(a, p, vec![1.0, 1.0], 0.0))
        .collect();
    let pop = Population::new(design, TreatmentCoding::unordered(3), types).map_err(err)?;
    let report = identification_report(&pop).map_err(err)?;
    let est = tsls_population(&pop).map_err(err)?;
    let bad = report.violating_types();
    render(&ExampleOutput {
        intercepts: est.first_stage.intercepts,
        slopes: est.first_stage.slopes,
        types: report
            .types
            .into_iter()
            .map(|t| ExampleType {
                proper: !bad.contains(&t.type_index),
                assignment: t.assignment.assignment,
                prob: t.prob,
                weights: t.weights,
            })
            .collect(),
    })
}

#[wasm_bindgen]
pub fn judge_weights(input: &str) -> Result<String, JsError> {
    judge_weights_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn threshold_linearity(input: &str) -> Result<String, JsError> {
    threshold_linearity_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn three_point(input: &str) -> Result<String, JsError> {
    three_point_json(input).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn three_point_flags_the_cross_weight_type() {
        let input = r#"{"types": [[[0,0,0],0.1],[[1,1,1],0.1],[[2,2,2],0.1],[[0,1,0],0.1],
            [[0,0,2],0.2],[[0,1,2],0.2],[[2,1,2],0.1],[[0,2,2],0.1]]}"#;
        let out: Value = serde_json::from_str(&three_point_json(input).unwrap()).unwrap();
        let t = &out["types"][6];
        assert_eq!(t["assignment"], serde_json::json!([2, 1, 2]));
        assert_eq!(t["proper"], false);
        assert!((t["weights"][0][1].as_f64().unwrap() + 2.5).abs() < 1e-9);
        assert_eq!(out["types"][3]["proper"], true);
    }

    #[test]
    fn affine_rates_are_linear_both_ways() {
        let out: Value = serde_json::from_str(
            &threshold_linearity_json(
                r#"{"rates": [[0.5, 0.1], [0.5, 0.15], [0.6, 0.15], [0.6, 0.2], [0.7, 0.2], [0.7, 0.25]],
                    "probs": [0.125, 0.125, 0.25, 0.25, 0.125, 0.125]}"#,
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(out["proper"], true);
        for d in out["linearity"].as_array().unwrap() {
            assert!(d["f"].as_f64().unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn judge_grid_reports_an_estimand() {
        let judges: Vec<Value> = [0.5, 0.7, 0.9]
            .iter()
            .flat_map(|c| [0.1, 0.2, 0.3].map(|i| serde_json::json!({"conviction": c, "incarceration": i, "prob": 1.0 / 9.0})))
            .collect();
        let input = serde_json::json!({ "judges": judges }).to_string();
        let out: Value = serde_json::from_str(&judge_weights_json(&input).unwrap()).unwrap();
        assert_eq!(out["estimand"].as_array().unwrap().len(), 2);
        assert_eq!(out["predicted"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn bad_input_is_an_error_message() {
        assert!(threshold_linearity_json("{").unwrap_err().starts_with("input:"));
        assert!(three_point_json(r#"{"types": [[[0,0,0], 1.0]]}"#).unwrap_err().contains("rank"));
    }
}
