mod common;

use mtsls::design::{Dataset, InstrumentDesign, Population, TreatmentCoding, TypeComponent};
use mtsls::dgp::{build_threshold_crossing_population, EffectProfile, LatentGrid, ThresholdDesign};
use mtsls::estimator::tsls_population_estimand;
use mtsls::spec_tests::{
    kitagawa_test, linearity_test_population, subsample_first_stage_test, Bins, KitagawaOptions, LinearityOptions,
    SubsampleOptions,
};
use mtsls::weights::{
    all_weight_matrices, bias_decomposition, mixture_weights, monotonicity_checks, weighted_effects, WeightOracle,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn population(seed: u64) -> Population {
    common::random_population(&mut common::rng(seed))
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn type_weights_average_to_identity(seed in any::<u64>()) {
        let pop = population(seed);
        let w = all_weight_matrices(&pop).unwrap();
        let mix = mixture_weights(&pop, &w);
        let n = pop.coding().n();
        prop_assert!((mix - DMatrix::<f64>::identity(n, n)).amax() < 1e-9);
    }

    #[test]
    fn estimand_is_weighted_effects(seed in any::<u64>()) {
        let pop = population(seed);
        let w = all_weight_matrices(&pop).unwrap();
        let lhs = tsls_population_estimand(&pop).unwrap();
        let rhs = weighted_effects(&pop, &w);
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn partialled_route_matches_direct_route(seed in any::<u64>()) {
        let pop = population(seed);
        let oracle = WeightOracle::new(&pop).unwrap();
        for i in 0..pop.types().len() {
            let v = pop.indicator_matrix(i);
            let direct = oracle.direct(&v).unwrap();
            let fwl = oracle.fwl(&v);
            let scale = 1.0 + direct.amax();
            prop_assert!((&direct - fwl).amax() < 1e-10 * scale);
        }
    }

    #[test]
    fn decomposition_reconstructs_estimand(seed in any::<u64>()) {
        let pop = population(seed);
        for k in 0..pop.coding().n() {
            match bias_decomposition(&pop, k) {
                Ok(d) => prop_assert!(d.residual.abs() < 1e-9 * (1.0 + d.estimand.abs())),
                Err(mtsls::Error::NoCompliers { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn exact_support_data_reproduces_population_estimand(seed in any::<u64>()) {
        let pop = population(seed);
        let data = Dataset::from_population(&pop, None).unwrap();
        let est = mtsls::tsls_estimate(&data, pop.coding(), false).unwrap();
        let target = tsls_population_estimand(&pop).unwrap();
        for (a, b) in est.beta_hat.iter().zip(&target) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn threshold_populations_are_jointly_monotone(
        seed in any::<u64>(),
        j in 3usize..7,
        n in 1usize..4,
    ) {
        let mut rng = common::rng(seed);
        let design = common::random_design(&mut rng, j, 1);
        let cutoffs: Vec<Vec<f64>> = (0..j)
            .map(|_| {
                let mut c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                c.sort_by(f64::total_cmp);
                c.dedup();
                c
            })
            .collect();
        prop_assume!(cutoffs.iter().all(|c| c.len() == n));
        let td = ThresholdDesign::new(design, cutoffs.clone()).unwrap().with_grid(LatentGrid::Exact).unwrap();
        let effects = EffectProfile { intercept: vec![1.0; n], slope: vec![0.5; n], y0: 0.0, y0_slope: 1.0 };
        let pop = build_threshold_crossing_population(&td, &effects).unwrap();
        prop_assert!(monotonicity_checks(&pop).joint);
        let total: f64 = pop.types().iter().map(|c| c.prob).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let means = pop.mean_indicators();
        for (z, c) in cutoffs.iter().enumerate() {
            for k in 0..n {
                prop_assert!((means[(z, k)] - (1.0 - c[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kitagawa_coefficients_match_type_weights(seed in any::<u64>()) {
        let pop = population(seed);
        let data = Dataset::from_population(&pop, None).unwrap();
        let mut ys: Vec<f64> = data.y().to_vec();
        ys.sort_by(f64::total_cmp);
        let bin = (ys[0], ys[ys.len() / 2]);
        let opts = KitagawaOptions { bins: Bins::Explicit(vec![bin]), ..Default::default() };
        let report = kitagawa_test(&data, pop.coding(), &opts).unwrap();

        let coding = pop.coding();
        let n = coding.n();
        let (m_rows, _) = coding.reconstruction();
        let w = all_weight_matrices(&pop).unwrap();
        for t in 1..coding.n_treatments() {
            for k in 0..n {
                let mut oracle = 0.0;
                for (c, ws) in pop.types().iter().zip(&w) {
                    let y_t = c.y0 + coding.indicators(t).iter().zip(&c.beta).map(|(a, b)| a * b).sum::<f64>();
                    if y_t < bin.0 || y_t > bin.1 {
                        continue;
                    }
                    oracle += c.prob * (0..n).map(|l| ws.w[k][l] * m_rows[t][l]).sum::<f64>();
                }
                let est = report.coefficients[(t - 1) * n + k].estimate;
                prop_assert!((est - oracle).abs() < 1e-8, "t={t} k={k}: {est} vs {oracle}");
            }
        }
    }

    #[test]
    fn subsample_coefficients_match_conditional_weights(seed in any::<u64>()) {
        let pop = population(seed);
        let mut rng = common::rng(seed ^ 0x5eed);
        let types: Vec<TypeComponent> = pop
            .types()
            .iter()
            .cloned()
            .map(|c| c.with_flag("f", rng.random_range(0.1..0.9)))
            .collect();
        let pop = pop.with_types(types).unwrap();
        let data = Dataset::from_population(&pop, Some("f")).unwrap();
        let mut opts = SubsampleOptions::new("f");
        opts.min_size = Some(1);
        let report = subsample_first_stage_test(&data, pop.coding(), &opts).unwrap();

        let n = pop.coding().n();
        let w = all_weight_matrices(&pop).unwrap();
        let share = pop.flag_share("f");
        let mut mean = DMatrix::zeros(n, n);
        for (c, ws) in pop.types().iter().zip(&w) {
            mean += ws.matrix() * (c.prob * c.flags["f"] / share);
        }
        for l in 0..n {
            for k in 0..n {
                let est = report.coefficients[l * n + k].estimate;
                prop_assert!((est - mean[(k, l)]).abs() < 1e-8, "η_{}{}: {est} vs {}", l + 1, k + 1, mean[(k, l)]);
            }
        }
    }

    #[test]
    fn linearity_statistic_vanishes_with_the_conditional_gap(
        seed in any::<u64>(),
        levels in 3usize..6,
        bend in prop_oneof![Just(0.0), 0.01f64..0.05],
    ) {
        // Pairs of points share a P_1 level and straddle a line in P_2, so
        // E[P_2 | P_1] is affine exactly when `bend` is zero.
        let mut rng = common::rng(seed);
        let mut rates = Vec::new();
        for i in 0..levels {
            let r1 = 0.5 + 0.4 * i as f64 / levels as f64 + rng.random_range(0.0..0.02);
            let centre = 0.1 + 0.3 * r1 + if i == 1 { bend } else { 0.0 };
            let spread = rng.random_range(0.01..0.05);
            rates.push(vec![r1, centre - spread]);
            rates.push(vec![r1, centre + spread]);
        }
        let design = InstrumentDesign::uniform(rates.clone()).unwrap();
        let td = ThresholdDesign::from_rates(design, &rates).unwrap().with_grid(LatentGrid::Exact).unwrap();
        let pop = build_threshold_crossing_population(&td, &EffectProfile::constant(vec![1.0, 1.0])).unwrap();
        let report = linearity_test_population(&pop, &LinearityOptions::new(1, 0), 1e4).unwrap();
        let r = &report.reset[0];
        let gap = r.conditional_gap.unwrap();
        prop_assert_eq!(gap < 1e-9, bend == 0.0);
        if gap < 1e-9 {
            prop_assert_eq!(r.f, 0.0);
        }
        if r.distinct_values <= 4 {
            prop_assert_eq!(r.f == 0.0, gap < 1e-9, "f = {}, gap = {}", r.f, gap);
        }
    }
}

#[test]
fn exclusive_design_weights_ignore_instrument_scale() {
    // Rescaling an instrument leaves the predicted treatments unchanged.
    let types: Vec<TypeComponent> = common::allowed_types()
        .into_iter()
        .map(|a| TypeComponent::new(a, 1.0 / 6.0, vec![1.0, 2.0], 0.0))
        .collect();
    let a = Population::new(common::three_point_design(), TreatmentCoding::unordered(3), types.clone()).unwrap();
    let scaled = InstrumentDesign::new(vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, -2.0]], vec![1.0 / 3.0; 3]).unwrap();
    let b = Population::new(scaled, TreatmentCoding::unordered(3), types).unwrap();
    let wa = all_weight_matrices(&a).unwrap();
    let wb = all_weight_matrices(&b).unwrap();
    for (x, y) in wa.iter().zip(&wb) {
        assert!((x.matrix() - y.matrix()).amax() < 1e-12);
    }
}
