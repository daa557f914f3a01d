use std::collections::BTreeMap;

use rand::Rng;

use super::chain::ChainState;
use super::Method;
use crate::error::{Error, Result};
use crate::models::ProbitCoefficients;
use crate::normal;
use crate::survey::{AuxiliaryMargin, Stratum, SurveySample};

/// Pr(X* = 1 | y, stratum) under the current outcome and response models.
///
/// For nonignorable methods this is `g·h₁ / (g·h₁ + (1 − g)·h₀)` with `g` the
/// outcome probability and `h_x = Pr(R = 1 | y, x)`; it is evaluated in log
/// space so that extreme predictors do not produce 0/0. Under MAR the response
/// model has no `x` term and the probability is `g`.
pub fn imputation_probability(
    y: u8,
    stratum: Stratum,
    outcome: &ProbitCoefficients,
    response: &ProbitCoefficients,
    method: Method,
) -> Result<f64> {
    let s = method.outcome_has_strata().then_some(stratum);
    let eta = outcome.linear_predictor(y, None, s)?;
    if !method.is_nonignorable() {
        if response.x_effect.is_some() {
            return Err(Error::Arity("MAR response model carries an x effect".into()));
        }
        return Ok(normal::cdf(eta));
    }
    let log_a = normal::log_cdf(eta) + normal::log_cdf(response.linear_predictor(y, Some(1), None)?);
    let log_b = normal::log_cdf(-eta) + normal::log_cdf(response.linear_predictor(y, Some(0), None)?);
    Ok(1.0 / (1.0 + (log_b - log_a).exp()))
}

/// Draws one imputation for a nonrespondent with the given `y` and stratum.
pub fn impute_missing_x<R: Rng + ?Sized>(
    y: u8,
    stratum: Stratum,
    outcome: &ProbitCoefficients,
    response: &ProbitCoefficients,
    method: Method,
    rng: &mut R,
) -> Result<u8> {
    let p = imputation_probability(y, stratum, outcome, response, method)?;
    Ok(u8::from(rng.random::<f64>() < p))
}

/// Ratio of N(candidate; T, V) to N(current; T, V). May exceed 1.
pub fn constraint_acceptance_ratio(candidate: f64, current: f64, total: f64, variance: f64) -> f64 {
    let dc = current - total;
    let dn = candidate - total;
    ((dc * dc - dn * dn) / (2.0 * variance)).exp()
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    y: u8,
    stratum_pos: usize,
    weight: f64,
}

/// The fixed parts of a sample the imputation step needs: nonrespondents in
/// sample order and the respondent contribution to each stratum total.
#[derive(Debug, Clone)]
pub struct ImputationTarget {
    strata: Vec<Stratum>,
    slots: Vec<Slot>,
    observed_totals: Vec<f64>,
}

impl ImputationTarget {
    pub fn new(sample: &SurveySample) -> Self {
        let strata: Vec<Stratum> = sample.strata().collect();
        let pos = |s: Stratum| strata.binary_search(&s).expect("stratum in design");
        let mut observed_totals = vec![0.0; strata.len()];
        let mut slots = Vec::new();
        for u in sample.units() {
            let p = pos(u.stratum);
            match u.x {
                Some(x) => observed_totals[p] += u.weight * f64::from(x),
                None => slots.push(Slot {
                    y: u.y,
                    stratum_pos: p,
                    weight: u.weight,
                }),
            }
        }
        Self {
            strata,
            slots,
            observed_totals,
        }
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn missing(&self) -> usize {
        self.slots.len()
    }

    /// `(y, stratum)` of each nonrespondent, in sample order.
    pub fn slot_keys(&self) -> impl Iterator<Item = (u8, Stratum)> + '_ {
        self.slots.iter().map(|s| (s.y, self.strata[s.stratum_pos]))
    }

    /// Completed Horvitz–Thompson totals by stratum position.
    fn totals(&self, imputations: &[u8]) -> Vec<f64> {
        let mut t = self.observed_totals.clone();
        for (slot, &x) in self.slots.iter().zip(imputations) {
            t[slot.stratum_pos] += slot.weight * f64::from(x);
        }
        t
    }

    pub fn completed_totals(&self, imputations: &[u8]) -> BTreeMap<Stratum, f64> {
        self.strata.iter().copied().zip(self.totals(imputations)).collect()
    }
}

/// Steps S1–S3: propose a full replacement of the imputations and accept or
/// reject it against the margin, as one block (overall margin) or one block
/// per stratum (per-stratum margins). Returns one acceptance flag per block.
///
/// Methods without a constraint always accept and return a single flag.
pub fn metropolis_imputation_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &ImputationTarget,
    margin: Option<&AuxiliaryMargin>,
    method: Method,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let margin = match (method.uses_constraint(), margin) {
        (true, Some(m)) => Some(m),
        (true, None) => return Err(Error::Config(format!("{method} requires a margin"))),
        (false, _) => None,
    };
    let blocks = match margin {
        Some(AuxiliaryMargin::PerStratum(_)) => target.strata.len(),
        _ => 1,
    };
    if target.slots.is_empty() {
        return Ok(vec![true; blocks]);
    }

    let k = target.strata.len();
    let mut prob = vec![0.0; 3 * k];
    for y in 1..=3u8 {
        for (p, &s) in target.strata.iter().enumerate() {
            prob[usize::from(y - 1) * k + p] =
                imputation_probability(y, s, &state.outcome_coef, &state.response_coef, method)?;
        }
    }
    let candidate: Vec<u8> = target
        .slots
        .iter()
        .map(|s| u8::from(rng.random::<f64>() < prob[usize::from(s.y - 1) * k + s.stratum_pos]))
        .collect();
    let cand_totals = target.totals(&candidate);
    let cur_totals: Vec<f64> = target.strata.iter().map(|s| state.completed_totals[s]).collect();

    let flags = match margin {
        None => {
            state.imputations = candidate;
            vec![true]
        }
        Some(AuxiliaryMargin::Overall { total, variance }) => {
            let p = constraint_acceptance_ratio(
                cand_totals.iter().sum(),
                cur_totals.iter().sum(),
                *total,
                *variance,
            );
            let accept = rng.random::<f64>() <= p;
            if accept {
                state.imputations = candidate;
            }
            vec![accept]
        }
        Some(AuxiliaryMargin::PerStratum(margins)) => {
            let mut flags = Vec::with_capacity(k);
            for (pos, s) in target.strata.iter().enumerate() {
                let m = margins
                    .get(s)
                    .ok_or_else(|| Error::Config(format!("no margin declared for stratum {s}")))?;
                let p = constraint_acceptance_ratio(cand_totals[pos], cur_totals[pos], m.total, m.variance);
                let accept = rng.random::<f64>() <= p;
                if accept {
                    for (i, slot) in target.slots.iter().enumerate() {
                        if slot.stratum_pos == pos {
                            state.imputations[i] = candidate[i];
                        }
                    }
                }
                flags.push(accept);
            }
            flags
        }
    };
    state.completed_totals = target.completed_totals(&state.imputations);
    Ok(flags)
}
