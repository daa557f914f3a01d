use std::collections::BTreeMap;

use rand::Rng;

use super::{PopulationUnit, SampleUnit, Stratum, StratifiedPopulation, StratumDesign, SurveySample};
use crate::error::{Error, Result};
use crate::models::ProbitCoefficients;
use crate::normal;
use crate::seed::rng_from_seed;

fn check_probability_vector(theta: &[f64; 3]) -> Result<()> {
    let sum: f64 = theta.iter().sum();
    if theta.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::ParameterDomain(format!(
            "{theta:?} is not a probability vector"
        )));
    }
    Ok(())
}

fn draw_category<R: Rng + ?Sized>(theta: &[f64; 3], rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    if u < theta[0] {
        1
    } else if u < theta[0] + theta[1] {
        2
    } else {
        3
    }
}

/// Generates a finite population: `y ~ Discrete(θ_s)` within each stratum and
/// `x | y ~ Bernoulli(Φ(α₀ + α₁₂·1[y=2] + α₁₃·1[y=3]))`.
///
/// Strata are generated in label order from a single stream seeded by `seed`.
pub fn generate_population(
    theta_by_stratum: &BTreeMap<Stratum, [f64; 3]>,
    alpha: &ProbitCoefficients,
    stratum_sizes: &BTreeMap<Stratum, usize>,
    seed: u64,
) -> Result<StratifiedPopulation> {
    if alpha.x_effect.is_some() || alpha.stratum_effects.is_some() {
        return Err(Error::Arity("population outcome model takes y only".into()));
    }
    let mut rng = rng_from_seed(seed);
    let px: [f64; 3] = [1, 2, 3].map(|y| {
        normal::cdf(alpha.linear_predictor(y, None, None).expect("y in range"))
    });
    let mut units = Vec::with_capacity(stratum_sizes.values().sum());
    for (&stratum, &size) in stratum_sizes {
        let theta = theta_by_stratum.get(&stratum).ok_or_else(|| {
            Error::ParameterDomain(format!("no category probabilities for stratum {stratum}"))
        })?;
        check_probability_vector(theta)?;
        if size == 0 {
            return Err(Error::ParameterDomain(format!("stratum {stratum} is empty")));
        }
        for _ in 0..size {
            let y = draw_category(theta, &mut rng);
            let x = u8::from(rng.random::<f64>() < px[usize::from(y - 1)]);
            units.push(PopulationUnit { stratum, y, x });
        }
    }
    StratifiedPopulation::new(units)
}

/// Stratified simple random sampling without replacement.
///
/// Each stratum is sampled by a partial Fisher–Yates shuffle of its unit
/// indices; selected units keep population order within the stratum and carry
/// the base weight `N_s / n_s`.
pub fn draw_stratified_sample(
    pop: &StratifiedPopulation,
    draws: &BTreeMap<Stratum, usize>,
    seed: u64,
) -> Result<SurveySample> {
    for s in draws.keys() {
        if !pop.stratum_sizes().contains_key(s) {
            return Err(Error::Design(format!("stratum {s} is not in the population")));
        }
    }
    let mut by_stratum: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (i, u) in pop.units().iter().enumerate() {
        by_stratum.entry(u.stratum).or_default().push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut units = Vec::with_capacity(draws.values().sum());
    let mut design = BTreeMap::new();
    for (&stratum, indices) in &mut by_stratum {
        let n = *draws.get(&stratum).ok_or_else(|| {
            Error::Design(format!("no sample size given for stratum {stratum}"))
        })?;
        let big_n = indices.len();
        if n > big_n {
            return Err(Error::Design(format!(
                "stratum {stratum}: n_s = {n} exceeds N_s = {big_n}"
            )));
        }
        if n == 0 {
            return Err(Error::Design(format!("stratum {stratum}: n_s must be positive")));
        }
        for i in 0..n {
            let j = rng.random_range(i..big_n);
            indices.swap(i, j);
        }
        let chosen = &mut indices[..n];
        chosen.sort_unstable();
        let d = StratumDesign {
            population_size: big_n as f64,
            draws: n,
        };
        let weight = d.weight();
        units.extend(chosen.iter().map(|&i| {
            let u = pop.units()[i];
            SampleUnit {
                stratum,
                weight,
                y: u.y,
                x: Some(u.x),
            }
        }));
        design.insert(stratum, d);
    }
    Ok(SurveySample::from_parts_unchecked(units, design))
}

/// The true values of erased items. Only simulation scoring reads these.
#[derive(Debug, Clone, PartialEq)]
pub struct SealedTruth {
    erased: Vec<(usize, u8)>,
}

impl SealedTruth {
    pub fn erased_count(&self) -> usize {
        self.erased.len()
    }

    /// Puts the true values back into a masked sample.
    pub fn restore(&self, masked: &SurveySample) -> Result<SurveySample> {
        let mut units = masked.units().to_vec();
        for &(i, x) in &self.erased {
            let unit = units
                .get_mut(i)
                .ok_or_else(|| Error::Arity("sealed record does not fit this sample".into()))?;
            unit.x = Some(x);
        }
        Ok(SurveySample::from_parts_unchecked(units, masked.design().clone()))
    }
}

/// Erases `x` with probability `Φ(γ₀ + γ₁₂·1[y=2] + γ₁₃·1[y=3] + γ₂·x)`.
pub fn impose_missingness(
    sample: &SurveySample,
    gamma: &ProbitCoefficients,
    seed: u64,
) -> Result<(SurveySample, SealedTruth)> {
    if !sample.is_complete() {
        return Err(Error::Design("sample already has missing values".into()));
    }
    if gamma.x_effect.is_none() || gamma.stratum_effects.is_some() {
        return Err(Error::Arity("missingness model takes y and x".into()));
    }
    let mut prob = [[0.0; 2]; 3];
    for y in 1..=3u8 {
        for x in 0..=1u8 {
            prob[usize::from(y - 1)][usize::from(x)] =
                normal::cdf(gamma.linear_predictor(y, Some(x), None)?);
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut erased = Vec::new();
    let units = sample
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let x = u.x.expect("checked complete");
            let p = prob[usize::from(u.y - 1)][usize::from(x)];
            if rng.random::<f64>() < p {
                erased.push((i, x));
                SampleUnit { x: None, ..*u }
            } else {
                *u
            }
        })
        .collect();
    Ok((
        SurveySample::from_parts_unchecked(units, sample.design().clone()),
        SealedTruth { erased },
    ))
}
