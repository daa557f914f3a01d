use std::collections::BTreeMap;

use anmi::estimators::{
    aggregate_runs, ht_with_se, rubin_combine, unweighted_probit_fit, weighted_probit_fit,
    MIEstimate, VarianceConvention,
};
use anmi::models::{ProbitCoefficients, ProbitTerms};
use anmi::seed::rng_from_seed;
use anmi::survey::{
    draw_stratified_sample, generate_population, PopulationUnit, SampleUnit, StratifiedPopulation,
    StratumDesign, SurveySample,
};
use anmi::Error;
use proptest::prelude::*;
use rand::Rng;

mod common;
use common::*;

const WOR: VarianceConvention = VarianceConvention::WithoutReplacement;

#[test]
fn weighted_fit_matches_numerical_optimizer() {
    let sample = weighted_sample(900, 2100, 30_000.0, 20_000.0, 11);
    let terms = ProbitTerms::base().with_strata([1, 2]);
    let fit = weighted_probit_fit(&sample, &terms, WOR).unwrap();
    assert!(fit.converged);
    let rows: Vec<Vec<f64>> = sample.units().iter().map(|u| terms.row(u.y, 0, u.stratum)).collect();
    let resp: Vec<u8> = sample.units().iter().map(|u| u.x.unwrap()).collect();
    let w: Vec<f64> = sample.units().iter().map(|u| u.weight).collect();
    let oracle = numerical_maximizer(|b| oracle_loglik(&rows, &resp, &w, b), terms.len());
    for (a, b) in fit.coefficients.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-6, "{:?} vs {:?}", fit.coefficients, oracle);
    }
    assert!(fit.standard_errors.iter().all(|&s| s > 0.0));
}

#[test]
fn equal_weights_reproduce_unweighted_fit() {
    let sample = weighted_sample(500, 500, 2000.0, 2000.0, 4);
    let terms = ProbitTerms::base().with_strata([1, 2]);
    let weighted = weighted_probit_fit(&sample, &terms, WOR).unwrap();
    let xs: Vec<u8> = sample.units().iter().map(|u| u.x.unwrap()).collect();
    let unweighted = unweighted_probit_fit(&sample, &xs, &terms).unwrap();
    for (a, b) in weighted.coefficients.iter().zip(&unweighted.coefficients) {
        assert!((a - b).abs() <= 1e-8);
    }
}

#[test]
fn response_model_recovers_known_coefficients() {
    // Response model r ~ y + x at n = 5000 with x complete.
    let gamma = ProbitCoefficients::new(-1.0, -0.6, 1.4).with_x(-0.2);
    let mut rng = rng_from_seed(77);
    let mut units = Vec::new();
    let mut r = Vec::new();
    for _ in 0..5000 {
        let y: u8 = rng.random_range(1..=3);
        let x: u8 = u8::from(rng.random::<f64>() < 0.4);
        let eta = gamma.linear_predictor(y, Some(x), None).unwrap();
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        r.push(u8::from(eta + z > 0.0));
        units.push(SampleUnit { stratum: 1, weight: 10.0, y, x: Some(x) });
    }
    let sample = SurveySample::new(units, BTreeMap::from([(1, StratumDesign { population_size: 50_000.0, draws: 5000 })]))
        .unwrap();
    let fit = unweighted_probit_fit(&sample, &r, &ProbitTerms::base().with_x()).unwrap();
    let truth = [-1.0, -0.6, 1.4, -0.2];
    for j in 0..4 {
        let z = (fit.coefficients[j] - truth[j]) / fit.standard_errors[j];
        assert!(z.abs() <= 3.0, "{}: {} ± {}", fit.terms[j], fit.coefficients[j], fit.standard_errors[j]);
    }
    assert_eq!(fit.coefficient("x"), Some(fit.coefficients[3]));
}

#[test]
fn constant_response_is_separation() {
    let sample = weighted_sample(50, 50, 500.0, 500.0, 2);
    let zeros = vec![0u8; sample.len()];
    assert!(matches!(
        unweighted_probit_fit(&sample, &zeros, &ProbitTerms::base()),
        Err(Error::Separation { .. })
    ));
}

#[test]
fn perfectly_predicted_levels_are_separation() {
    // x = 0 whenever y = 2 and x = 1 whenever y = 3.
    let mut units = Vec::new();
    for i in 0..60 {
        let y = (1 + i % 3) as u8;
        units.push(SampleUnit { stratum: 1, weight: 2.0, y, x: Some(u8::from(y == 3 || i % 6 == 0)) });
    }
    let sample = SurveySample::new(units, BTreeMap::from([(1, StratumDesign { population_size: 120.0, draws: 60 })]))
        .unwrap();
    assert!(matches!(
        weighted_probit_fit(&sample, &ProbitTerms::base(), WOR),
        Err(Error::Separation { .. })
    ));
}

#[test]
fn fit_result_json_is_keyed_by_term() {
    let sample = weighted_sample(100, 100, 1000.0, 1000.0, 6);
    let fit = weighted_probit_fit(&sample, &ProbitTerms::base(), WOR).unwrap();
    let json = serde_json::to_string(&fit).unwrap();
    assert!(json.starts_with(r#"{"coefficients":{"(Intercept)":"#), "{json}");
    assert!(json.contains(r#""standard_errors":{"(Intercept)":"#));
    assert!(json.contains(r#""converged":true"#));
}

#[test]
fn with_replacement_variance_is_larger() {
    let sample = weighted_sample(300, 300, 900.0, 700.0, 8);
    let terms = ProbitTerms::base();
    let wor = weighted_probit_fit(&sample, &terms, WOR).unwrap();
    let wr = weighted_probit_fit(&sample, &terms, VarianceConvention::WithReplacement).unwrap();
    assert_eq!(wor.coefficients, wr.coefficients);
    for (a, b) in wor.standard_errors.iter().zip(&wr.standard_errors) {
        assert!(a < b);
    }
    let (t1, se1) = ht_with_se(&sample, WOR).unwrap();
    let (t2, se2) = ht_with_se(&sample, VarianceConvention::WithReplacement).unwrap();
    assert_eq!(t1, t2);
    assert!(se1 < se2);
}

#[test]
fn ht_se_degenerate_cases() {
    let mk = |xs: &[(u32, u8)], sizes: &[(u32, f64, usize)]| {
        let design: BTreeMap<u32, StratumDesign> = sizes
            .iter()
            .map(|&(s, n, d)| (s, StratumDesign { population_size: n, draws: d }))
            .collect();
        let units = xs
            .iter()
            .map(|&(s, x)| SampleUnit { stratum: s, weight: design[&s].weight(), y: 1, x: Some(x) })
            .collect();
        SurveySample::new(units, design).unwrap()
    };
    let same = mk(&[(1, 1), (1, 1), (2, 0), (2, 0), (2, 0)], &[(1, 10.0, 2), (2, 30.0, 3)]);
    assert_eq!(ht_with_se(&same, WOR).unwrap(), (10.0, 0.0));
    let census = mk(&[(1, 1), (1, 0), (2, 0), (2, 1)], &[(1, 2.0, 2), (2, 2.0, 2)]);
    assert_eq!(ht_with_se(&census, WOR).unwrap().1, 0.0);
    let single = mk(&[(1, 1), (2, 0), (2, 1)], &[(1, 5.0, 1), (2, 6.0, 2)]);
    assert!(matches!(ht_with_se(&single, WOR), Err(Error::VarianceUndefined { stratum: 1, .. })));
}

#[test]
fn ht_variance_estimator_is_unbiased_under_resampling() {
    // Two strata of 10 with 5 ones each and n_s = 4: the design variance of
    // the HT total is 25/3 by exhaustive enumeration.
    let xs1: [u8; 10] = [1, 0, 1, 1, 0, 0, 1, 0, 1, 0];
    let xs2: [u8; 10] = [0, 0, 1, 1, 1, 0, 1, 1, 0, 0];
    let units: Vec<PopulationUnit> = xs1
        .iter()
        .map(|&x| PopulationUnit { stratum: 1, y: 1, x })
        .chain(xs2.iter().map(|&x| PopulationUnit { stratum: 2, y: 1, x }))
        .collect();
    let pop = StratifiedPopulation::new(units).unwrap();
    let draws = BTreeMap::from([(1, 4), (2, 4)]);
    let reps = 10_000;
    let vars: Vec<f64> = (0..reps)
        .map(|r| {
            let s = draw_stratified_sample(&pop, &draws, 1000 + r).unwrap();
            ht_with_se(&s, WOR).unwrap().1.powi(2)
        })
        .collect();
    let mean = vars.iter().sum::<f64>() / reps as f64;
    let sd = (vars.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let se = sd / (reps as f64).sqrt();
    assert!((mean - 25.0 / 3.0).abs() <= 3.0 * se, "mean variance estimate {mean} ± {se}");
}

#[test]
fn intercept_recovers_truth_on_full_response_samples() {
    // Ten populations with the first simulation setting; each fit uses the
    // complete sample, so only sampling error remains.
    let theta = BTreeMap::from([(1, [0.5, 0.15, 0.35]), (2, [0.1, 0.45, 0.45])]);
    let alpha = ProbitCoefficients::new(0.5, -0.5, -1.0);
    let estimates: Vec<f64> = (0..10)
        .map(|m| {
            let pop = generate_population(&theta, &alpha, &BTreeMap::from([(1, 35_000), (2, 15_000)]), 500 + m).unwrap();
            let s = draw_stratified_sample(&pop, &BTreeMap::from([(1, 1500), (2, 3500)]), 600 + m).unwrap();
            weighted_probit_fit(&s, &ProbitTerms::base(), WOR).unwrap().coefficients[0]
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 10.0;
    let sd = (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
    assert!((mean - 0.5).abs() <= 3.0 * sd / 10f64.sqrt(), "{mean} ± {}", sd / 10f64.sqrt());
}

fn straight_line_rubin(q: &[f64], u: &[f64]) -> (f64, f64, f64, f64) {
    let l = q.len() as f64;
    let mut qbar = 0.0;
    let mut ubar = 0.0;
    for i in 0..q.len() {
        qbar += q[i];
        ubar += u[i];
    }
    qbar /= l;
    ubar /= l;
    let mut b = 0.0;
    for v in q {
        b += (v - qbar) * (v - qbar);
    }
    b /= l - 1.0;
    (qbar, b, ubar, (1.0 + 1.0 / l) * b + ubar)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn rubin_matches_straight_line(pairs in prop::collection::vec((-1e3f64..1e3, 1e-3f64..1e3), 50)) {
        let (q, u): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let e = rubin_combine(&q, &u).unwrap();
        let (qbar, b, ubar, t) = straight_line_rubin(&q, &u);
        prop_assert!(close(e.point, qbar) && close(e.between, b) && close(e.within, ubar) && close(e.variance, t));
        prop_assert_eq!(e.variance, (1.0 + 1.0 / e.l as f64) * e.between + e.within);
        prop_assert!(e.between >= 0.0);
    }

    #[test]
    fn rubin_is_permutation_invariant(pairs in prop::collection::vec((-1e3f64..1e3, 1e-3f64..1e3), 2..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (q, u): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng_from_seed(seed));
        let (q2, u2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let a = rubin_combine(&q, &u).unwrap();
        let b = rubin_combine(&q2, &u2).unwrap();
        prop_assert!(close(a.point, b.point) && close(a.variance, b.variance));
    }

    #[test]
    fn aggregate_matches_direct_formula(runs in prop::collection::vec((-1e4f64..1e4, 0f64..1e6), 10)) {
        let est: Vec<MIEstimate> = runs
            .iter()
            .map(|&(q, t)| MIEstimate { point: q, variance: t, within: t, between: 0.0, l: 50 })
            .collect();
        let (p, se) = aggregate_runs(&est).unwrap();
        let direct_p = runs.iter().map(|r| r.0).sum::<f64>() / 10.0;
        let direct_se = (runs.iter().map(|r| r.1).sum::<f64>() / 10.0).sqrt();
        prop_assert!(close(p, direct_p) && close(se, direct_se));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linearization_variance_ignores_order_within_strata(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let sample = weighted_sample(80, 120, 800.0, 600.0, seed);
        let mut units = sample.units().to_vec();
        units.shuffle(&mut rng_from_seed(seed ^ 1));
        let shuffled = SurveySample::new(units, sample.design().clone()).unwrap();
        let terms = ProbitTerms::base().with_strata([1, 2]);
        let a = weighted_probit_fit(&sample, &terms, WOR);
        let b = weighted_probit_fit(&shuffled, &terms, WOR);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.standard_errors.iter().zip(&b.standard_errors) {
                    prop_assert!((x - y).abs() <= 1e-6 * x.max(1e-3));
                }
                for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                    prop_assert!((x - y).abs() <= 1e-7);
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "fits disagree on success"),
        }
    }

    #[test]
    fn converged_fits_have_negligible_score(seed in any::<u64>()) {
        use anmi::estimators::{solve_probit, ProbitData};
        let sample = weighted_sample(150, 250, 3000.0, 2500.0, seed);
        let terms = ProbitTerms::base().with_strata([1, 2]);
        let rows: Vec<Vec<f64>> = sample.units().iter().map(|u| terms.row(u.y, 0, u.stratum)).collect();
        let resp: Vec<u8> = sample.units().iter().map(|u| u.x.unwrap()).collect();
        let w: Vec<f64> = sample.units().iter().map(|u| u.weight).collect();
        let data = ProbitData::new(rows, resp, w).unwrap();
        if let Ok(sol) = solve_probit(&data) {
            if sol.converged {
                let total = data.unit_scores(&sol.beta).into_iter().fold(nalgebra::DVector::zeros(terms.len()), |a, u| a + u);
                prop_assert!(total.amax() < 1e-8, "score {}", total.amax());
            }
        }
    }
}
