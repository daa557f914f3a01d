#![allow(dead_code)]
//! Oracles and fixtures shared by the integration tests.

use std::collections::BTreeMap;

use anmi::mcmc::{metropolis_imputation_step, ChainState, ImputationTarget, Method};
use anmi::models::ProbitCoefficients;
use anmi::normal;
use anmi::seed::rng_from_seed;
use anmi::survey::{AuxiliaryMargin, SampleUnit, StratumDesign, SurveySample};
use rand::Rng;

pub fn weighted_sample(n1: usize, n2: usize, big1: f64, big2: f64, seed: u64) -> SurveySample {
    let mut rng = rng_from_seed(seed);
    let mut units = Vec::new();
    let alpha = [0.3, -0.6, 0.4, 0.5];
    for (stratum, n, big) in [(1u32, n1, big1), (2, n2, big2)] {
        for _ in 0..n {
            let y: u8 = rng.random_range(1..=3);
            let eta = alpha[0]
                + if y == 2 { alpha[1] } else { 0.0 }
                + if y == 3 { alpha[2] } else { 0.0 }
                + if stratum == 2 { alpha[3] } else { 0.0 };
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            units.push(SampleUnit {
                stratum,
                weight: big / n as f64,
                y,
                x: Some(u8::from(eta + z > 0.0)),
            });
        }
    }
    let design = BTreeMap::from([
        (1, StratumDesign { population_size: big1, draws: n1 }),
        (2, StratumDesign { population_size: big2, draws: n2 }),
    ]);
    SurveySample::new(units, design).unwrap()
}

/// ln Φ via `statrs`'s erfc, independent of the crate's normal module.
pub fn oracle_log_cdf(x: f64) -> f64 {
    (0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)).ln()
}

pub fn oracle_loglik(rows: &[Vec<f64>], resp: &[u8], w: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(resp)
        .zip(w)
        .map(|((r, &y), &w)| {
            let eta: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            w * oracle_log_cdf(if y == 1 { eta } else { -eta })
        })
        .sum()
}

/// Newton's method on finite-difference derivatives of the log-likelihood.
pub fn numerical_maximizer(f: impl Fn(&[f64]) -> f64, dim: usize) -> Vec<f64> {
    let grad = |b: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|j| {
                let h = 1e-5;
                let mut up = b.to_vec();
                let mut dn = b.to_vec();
                up[j] += h;
                dn[j] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    };
    let mut beta = vec![0.0; dim];
    for _ in 0..50 {
        let g = grad(&beta);
        let h = 1e-4;
        let mut hess = vec![vec![0.0; dim]; dim];
        for j in 0..dim {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let (gu, gd) = (grad(&up), grad(&dn));
            for i in 0..dim {
                hess[i][j] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        // Solve hess · step = −g by Gauss–Jordan.
        let mut a: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let mut row = hess[i].clone();
                row.push(-g[i]);
                row
            })
            .collect();
        for c in 0..dim {
            let p = (c..dim).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, p);
            let piv = a[c][c];
            for v in a[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..dim {
                if r != c {
                    let f = a[r][c];
                    for k in 0..=dim {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let step: Vec<f64> = a.iter().map(|r| r[dim]).collect();
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if step.iter().all(|s| s.abs() < 1e-12) {
            break;
        }
    }
    beta
}

pub fn unit(stratum: u32, weight: f64, y: u8, x: Option<u8>) -> SampleUnit {
    SampleUnit { stratum, weight, y, x }
}

pub fn design(entries: &[(u32, f64, usize)]) -> BTreeMap<u32, StratumDesign> {
    entries
        .iter()
        .map(|&(s, n, d)| (s, StratumDesign { population_size: n, draws: d }))
        .collect()
}

pub fn fixed_state(
    sample: &SurveySample,
    target: &ImputationTarget,
    method: Method,
    outcome: ProbitCoefficients,
) -> ChainState {
    let mut rng = rng_from_seed(0);
    let mut state = ChainState::initial(sample, target, method, &mut rng);
    state.outcome_coef = outcome;
    state.response_coef = ProbitCoefficients::new(-0.25, 0.1, 0.3).with_x(-1.1);
    state
}

/// Brute-force stationary law of the imputation step with parameters held
/// fixed: proposal mass of each pattern times the constraint density of each
/// block's completed total.
pub fn enumerate(probs: &[f64], density: impl Fn(&[u8]) -> f64) -> Vec<f64> {
    let m = probs.len();
    let mut mass: Vec<f64> = (0..1usize << m)
        .map(|code| {
            let x: Vec<u8> = (0..m).map(|i| ((code >> i) & 1) as u8).collect();
            let prior: f64 = x
                .iter()
                .zip(probs)
                .map(|(&xi, &p)| if xi == 1 { p } else { 1.0 - p })
                .product();
            prior * density(&x)
        })
        .collect();
    let z: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|v| *v /= z);
    mass
}

pub fn empirical(
    sample: &SurveySample,
    margin: &AuxiliaryMargin,
    method: Method,
    outcome: ProbitCoefficients,
    steps: usize,
) -> Vec<f64> {
    let target = ImputationTarget::new(sample);
    let mut state = fixed_state(sample, &target, method, outcome);
    let mut rng = rng_from_seed(2024);
    let mut counts = vec![0usize; 1 << target.missing()];
    for _ in 0..steps {
        metropolis_imputation_step(&mut state, &target, Some(margin), method, &mut rng).unwrap();
        let code: usize = state
            .imputations
            .iter()
            .enumerate()
            .map(|(i, &x)| usize::from(x) << i)
            .sum();
        counts[code] += 1;
    }
    counts.iter().map(|&c| c as f64 / steps as f64).collect()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn an_probability(eta_outcome: f64, y: u8) -> f64 {
    let g = normal::cdf(eta_outcome);
    let gamma_y = [0.0, 0.1, 0.3][usize::from(y - 1)];
    let h1 = normal::cdf(-0.25 + gamma_y - 1.1);
    let h0 = normal::cdf(-0.25 + gamma_y);
    g * h1 / (g * h1 + (1.0 - g) * h0)
}

/// Total-variation distance between the imputation step's empirical law on a
/// six-unit, two-missing sample and its enumerated stationary law.
pub fn six_unit_overall_tv(steps: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let sample = SurveySample::new(
        vec![
            unit(1, 10.0, 1, Some(1)),
            unit(1, 10.0, 2, Some(0)),
            unit(1, 10.0, 3, Some(1)),
            unit(1, 10.0, 1, None),
            unit(1, 10.0, 2, Some(0)),
            unit(1, 10.0, 3, None),
        ],
        design(&[(1, 60.0, 6)]),
    )
    .unwrap();
    let (t, v) = (30.0, 60.0);
    let margin = AuxiliaryMargin::overall(t, v).unwrap();
    let alpha = ProbitCoefficients::new(0.5, -0.5, -1.0);
    let probs = [an_probability(0.5, 1), an_probability(-0.5, 3)];
    let want = enumerate(&probs, |x| {
        let total = 20.0 + 10.0 * f64::from(x[0] + x[1]);
        (-(total - t) * (total - t) / (2.0 * v)).exp()
    });
    let got = empirical(&sample, &margin, Method::AnConstraint, alpha, steps);
    (total_variation(&got, &want), got, want)
}
