mod common;

use mtsls::design::{Cell, CellPopulation, Dataset, InstrumentDesign, Population, TreatmentCoding, TypeComponent};
use mtsls::dgp::{build_judge_design, sample_dataset, JudgeDesign};
use mtsls::spec_tests::{
    covary_similarly_test, kitagawa_test, linearity_test, linearity_test_population, subsample_first_stage_test, Bins,
    CovaryOptions, KitagawaOptions, LinearityOptions, SubsampleOptions,
};
use mtsls::weights::covariate_weight_analysis;
use mtsls::Error;
use rayon::prelude::*;

fn judge_population() -> Population {
    build_judge_design(&JudgeDesign::new(common::grid_of_25(), common::sloped_effects())).unwrap()
}

fn allowed_population(flag_probs: &[f64]) -> Population {
    let probs = [0.2, 0.1, 0.1, 0.2, 0.2, 0.2];
    let types = common::allowed_types()
        .into_iter()
        .zip(probs)
        .zip(flag_probs)
        .enumerate()
        .map(|(i, ((a, p), f))| TypeComponent::new(a, p, vec![1.0 + i as f64, 0.5], 0.0).with_flag("f", *f))
        .collect();
    Population::new(common::three_point_design(), TreatmentCoding::unordered(3), types).unwrap()
}

fn alternating_cells(len: usize) -> Vec<String> {
    (0..len).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect()
}

#[test]
fn kitagawa_binary_layout_has_both_families() {
    let pop = judge_population();
    let data = sample_dataset(&pop, 20_000, 11, 1.0).unwrap().binarize_outcome(1.0);
    let data = data.clone().with_cells(alternating_cells(data.len())).unwrap();
    let opts = KitagawaOptions { fixed_effects: true, ..Default::default() };
    let report = kitagawa_test(&data, pop.coding(), &opts).unwrap();

    let mut equations: Vec<&str> = report.coefficients.iter().map(|c| c.equation.as_str()).collect();
    equations.dedup();
    assert_eq!(equations.len(), 4, "{equations:?}");
    assert!(equations[..2].iter().all(|e| e.starts_with("Y·")));
    assert!(equations[2..].iter().all(|e| e.starts_with("(1−Y)·")));
    assert!(report.coefficients.iter().all(|c| c.regressor == "P_1" || c.regressor == "P_2"));

    // Ordered three-treatment sign pattern for each family.
    for family in ["ϑ", "ψ"] {
        for (coef, symbol) in [("11", ">= 0"), ("12", "<= 0"), ("21", "= 0"), ("22", ">= 0")] {
            let label = format!("{family}_{coef} {symbol}");
            assert!(report.hypothesis(&label).is_some(), "missing {label}");
        }
    }
}

#[test]
fn kitagawa_zero_outcome_gives_zero_coefficients() {
    let pop = judge_population();
    let data = sample_dataset(&pop, 5_000, 3, 1.0).unwrap();
    let data = data.with_outcome(vec![0.0; data.len()]).unwrap();
    let report = kitagawa_test(&data, pop.coding(), &KitagawaOptions::default()).unwrap();
    let y_family: Vec<_> = report.coefficients.iter().filter(|c| c.name.starts_with('ϑ')).collect();
    assert_eq!(y_family.len(), 4);
    assert!(y_family.iter().all(|c| c.estimate.abs() < 1e-12));
}

#[test]
fn kitagawa_rejects_empty_explicit_bin() {
    let pop = judge_population();
    let data = sample_dataset(&pop, 2_000, 3, 1.0).unwrap();
    let opts = KitagawaOptions { bins: Bins::Explicit(vec![(1e6, 2e6)]), ..Default::default() };
    let err = kitagawa_test(&data, pop.coding(), &opts).unwrap_err();
    assert!(matches!(err, Error::EmptyBin { .. }), "{err}");
}

#[test]
fn kitagawa_size_on_proper_population() {
    let pop = judge_population();
    let reps = 200;
    let clean = (0..reps)
        .into_par_iter()
        .filter(|&r| {
            let data = sample_dataset(&pop, 100_000, 30_000 + r as u64, 1.0).unwrap().binarize_outcome(1.0);
            !kitagawa_test(&data, pop.coding(), &KitagawaOptions::default()).unwrap().reject_any
        })
        .count();
    let share = clean as f64 / reps as f64;
    assert!(share >= 0.9, "non-rejection share {share}");
}

#[test]
fn full_sample_first_stage_is_identity() {
    let pop = judge_population();
    let data = sample_dataset(&pop, 20_000, 5, 1.0).unwrap();
    let data = data.clone().with_flag("all", vec![true; data.len()]).unwrap();
    let report = subsample_first_stage_test(&data, pop.coding(), &SubsampleOptions::new("all")).unwrap();
    let n = pop.coding().n();
    for l in 0..n {
        for k in 0..n {
            let target = if k == l { 1.0 } else { 0.0 };
            let est = report.coefficients[l * n + k].estimate;
            assert!((est - target).abs() < 1e-9, "η_{}{} = {est}", l + 1, k + 1);
        }
    }
    assert!(!report.decision.unwrap().reject);
}

#[test]
fn instrument_variant_rescales_the_predicted_variant() {
    let pop = allowed_population(&[0.3, 0.5, 0.7, 0.4, 0.6, 0.5]);
    let data = Dataset::from_population(&pop, Some("f")).unwrap();
    let mut opts = SubsampleOptions::new("f");
    opts.min_size = Some(1);
    let with_p = subsample_first_stage_test(&data, pop.coding(), &opts).unwrap();
    opts.use_z = true;
    let with_z = subsample_first_stage_test(&data, pop.coding(), &opts).unwrap();

    // Support is {0, e_1, e_2}; P_k moves only with Z_k, with slope b_k.
    let means = pop.mean_indicators();
    let n = pop.coding().n();
    for k in 0..n {
        let other = 1 + (1 - k);
        assert!((means[(other, k)] - means[(0, k)]).abs() < 1e-12);
    }
    let b: Vec<f64> = (0..n).map(|k| means[(k + 1, k)] - means[(0, k)]).collect();
    assert!(b.iter().all(|&v| v > 0.0));
    for l in 0..n {
        for k in 0..n {
            let p = with_p.coefficients[l * n + k].estimate;
            let z = with_z.coefficients[l * n + k].estimate;
            assert!((z - p * b[k]).abs() < 1e-10, "η_{}{}: {z} vs {} · {}", l + 1, k + 1, p, b[k]);
        }
    }
}

#[test]
fn subsample_minimum_size_is_enforced() {
    let pop = judge_population();
    let data = sample_dataset(&pop, 2_000, 9, 1.0).unwrap();
    let flags: Vec<bool> = (0..data.len()).map(|i| i < 10).collect();
    let data = data.with_flag("few", flags).unwrap();
    let err = subsample_first_stage_test(&data, pop.coding(), &SubsampleOptions::new("few")).unwrap_err();
    assert!(matches!(err, Error::SubsampleTooSmall { size: 10, .. }), "{err}");
}

#[test]
fn affine_judges_have_zero_reset_statistic() {
    let pop = build_judge_design(&JudgeDesign::new(common::affine_judges(), common::sloped_effects())).unwrap();
    for pair in [(1, 0), (0, 1)] {
        let report = linearity_test_population(&pop, &LinearityOptions::new(pair.0, pair.1), 1e4).unwrap();
        assert!(report.reset[0].f.abs() < 1e-9, "{pair:?}: F = {}", report.reset[0].f);
        assert!(!report.reject_any);
    }
    // Exact support rows carry probabilities; scale them to a sample size.
    let data = Dataset::from_population(&pop, None).unwrap();
    let counts = data.weights().unwrap().iter().map(|w| w * 1e4).collect();
    let data = data.with_weights(counts).unwrap();
    let report = linearity_test(&data, pop.coding(), &LinearityOptions::new(1, 0)).unwrap();
    assert!(report.reset[0].f.abs() < 1e-9);
    assert!(!report.binned_means.is_empty());
}

#[test]
fn linearity_needs_three_distinct_values() {
    let judges = vec![
        mtsls::dgp::Judge::new(0.6, 0.2, 0.5),
        mtsls::dgp::Judge::new(0.7, 0.3, 0.5),
    ];
    let pop = build_judge_design(&JudgeDesign::new(judges, common::sloped_effects())).unwrap();
    let err = linearity_test_population(&pop, &LinearityOptions::new(1, 0), 1e4).unwrap_err();
    assert!(matches!(err, Error::InsufficientVariation(_) | Error::Rank(_)), "{err}");
}

fn cell(label: &str, probs: Vec<f64>, pop: &Population) -> Cell {
    Cell {
        label: label.to_string(),
        prob: 0.5,
        design: InstrumentDesign::mutually_exclusive(2, probs).unwrap(),
        types: pop.types().to_vec(),
    }
}

#[test]
fn identical_cells_covary_with_unit_scale() {
    let base = allowed_population(&[0.5; 6]);
    let pop = CellPopulation::new(
        base.coding().clone(),
        vec![cell("a", vec![1.0 / 3.0; 3], &base), cell("b", vec![1.0 / 3.0; 3], &base)],
    )
    .unwrap();
    let data = Dataset::from_cell_population(&pop).unwrap();
    let opts = CovaryOptions { replicates: 50, ..Default::default() };
    let report = covary_similarly_test(&data, pop.coding(), &opts).unwrap();
    for c in &report.cells {
        assert!((c.scale - 1.0).abs() < 1e-10);
        for (l, row) in c.matrix.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let target = if k == l { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-10, "cell {}: C_{}{} = {v}", c.label, l + 1, k + 1);
            }
        }
    }
}

#[test]
fn covary_bootstrap_is_deterministic() {
    let base = allowed_population(&[0.5; 6]);
    let pop = CellPopulation::new(
        base.coding().clone(),
        vec![cell("a", vec![1.0 / 3.0; 3], &base), cell("b", vec![0.5, 0.2, 0.3], &base)],
    )
    .unwrap();
    let data = mtsls::dgp::sample_cell_dataset(&pop, 4_000, 2, 1.0).unwrap();
    let opts = CovaryOptions { replicates: 99, seed: 42, ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| covary_similarly_test(&data, pop.coding(), &opts).unwrap())
    };
    let p = |r: &mtsls::spec_tests::TestReport| r.hypotheses.iter().map(|h| h.p_value).collect::<Vec<_>>();
    let a = run(1);
    let b = run(4);
    assert_eq!(p(&a), p(&b));
    assert_eq!(p(&a), p(&run(2)));
}

#[test]
fn covary_detects_non_proportional_cells() {
    let base = allowed_population(&[0.5; 6]);
    let pop = CellPopulation::new(
        base.coding().clone(),
        vec![cell("a", vec![0.6, 0.3, 0.1], &base), cell("b", vec![0.2, 0.1, 0.7], &base)],
    )
    .unwrap();
    let oracle = covariate_weight_analysis(&pop).unwrap();
    assert!(!oracle.covary_similarly);
    let worst = oracle
        .cells
        .iter()
        .flat_map(|c| c.ratios.clone().unwrap().into_iter().flatten())
        .map(f64::abs)
        .filter(|v| (v - 1.0).abs() > 1e-12)
        .fold(0.0, f64::max);
    assert!(worst > 0.1, "oracle contamination ratio {worst}");

    let reps = 100;
    let rejected = (0..reps)
        .into_par_iter()
        .filter(|&r| {
            let data = mtsls::dgp::sample_cell_dataset(&pop, 10_000, 60_000 + r as u64, 1.0).unwrap();
            let opts = CovaryOptions { replicates: 199, seed: r as u64, ..Default::default() };
            covary_similarly_test(&data, pop.coding(), &opts).unwrap().decision.unwrap().reject
        })
        .count();
    let power = rejected as f64 / reps as f64;
    assert!(power > 0.9, "power {power}");
}

#[test]
fn covary_needs_two_cells_and_distinct_values() {
    let base = allowed_population(&[0.5; 6]);
    let data = Dataset::from_population(&base, None).unwrap();
    let single = data.clone().with_cells(vec!["a".to_string(); data.len()]).unwrap();
    assert!(covary_similarly_test(&single, base.coding(), &CovaryOptions::default()).is_err());

    // A cell where every row sees the same instrument value is degenerate.
    let labels: Vec<String> = (0..data.len())
        .map(|i| if data.z_row(i) == [0.0, 0.0] { "flat" } else { "rest" }.to_string())
        .collect();
    let split = data.with_cells(labels).unwrap();
    let err = covary_similarly_test(&split, base.coding(), &CovaryOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateCells(ref c) if c == &["flat".to_string()]), "{err}");
}
