use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::imputation::{metropolis_imputation_step, ImputationTarget};
use super::probit::{update_probit_coefficients, BinaryPatterns};
use super::theta::update_theta;
use super::{ChainSettings, Method};
use crate::error::{Error, Result};
use crate::models::{ProbitCoefficients, ProbitTerms};
use crate::seed::rng_from_seed;
use crate::survey::{ht_variance_by_stratum, AuxiliaryMargin, Stratum, SurveySample};

/// Length of the post-burn-in windows scanned for low acceptance.
pub const WARNING_WINDOW: usize = 500;
/// Acceptance ratio below which a window triggers a warning.
pub const LOW_ACCEPTANCE: f64 = 0.1;

/// Current values of every unknown in the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: [f64; 3],
    pub outcome_coef: ProbitCoefficients,
    pub response_coef: ProbitCoefficients,
    /// One value per nonrespondent, in sample order.
    pub imputations: Vec<u8>,
    /// Completed Horvitz–Thompson total of each stratum.
    pub completed_totals: BTreeMap<Stratum, f64>,
}

impl ChainState {
    /// Starting state: coefficients at zero, uniform `theta`, and each missing
    /// `x` drawn as Bernoulli(respondent mean of `x`).
    pub fn initial<R: Rng + ?Sized>(
        sample: &SurveySample,
        target: &ImputationTarget,
        method: Method,
        rng: &mut R,
    ) -> Self {
        let observed: Vec<u8> = sample.units().iter().filter_map(|u| u.x).collect();
        let p = if observed.is_empty() {
            0.5
        } else {
            observed.iter().map(|&x| f64::from(x)).sum::<f64>() / observed.len() as f64
        };
        let imputations: Vec<u8> = (0..target.missing()).map(|_| u8::from(rng.random::<f64>() < p)).collect();
        let outcome_terms = method.outcome_terms(sample);
        let response_terms = method.response_terms();
        Self {
            theta: [1.0 / 3.0; 3],
            outcome_coef: outcome_terms.coefficients(&vec![0.0; outcome_terms.len()]),
            response_coef: response_terms.coefficients(&vec![0.0; response_terms.len()]),
            completed_totals: target.completed_totals(&imputations),
            imputations,
        }
    }

    pub fn overall_total(&self) -> f64 {
        self.completed_totals.values().sum()
    }
}

/// Post-burn-in acceptance indicators of the imputation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceTrace {
    /// Whether the method consulted a margin. Unconstrained steps always accept.
    pub constrained: bool,
    /// Block labels: `None` for the whole imputation vector, otherwise the
    /// stratum whose sub-vector is accepted separately.
    pub blocks: Vec<Option<Stratum>>,
    /// `accepted[t][b]` for post-burn-in iteration `t` and block `b`.
    pub accepted: Vec<Vec<bool>>,
}

impl AcceptanceTrace {
    pub fn iterations(&self) -> usize {
        self.accepted.len()
    }

    fn ratio_over(&self, range: std::ops::Range<usize>, block: usize) -> f64 {
        let n = range.len();
        if n == 0 {
            return 1.0;
        }
        self.accepted[range].iter().filter(|a| a[block]).count() as f64 / n as f64
    }

    pub fn block_ratio(&self, block: usize) -> f64 {
        self.ratio_over(0..self.iterations(), block)
    }

    /// Share of accepted proposals over all blocks and iterations.
    pub fn overall_ratio(&self) -> f64 {
        let total: usize = self.accepted.iter().map(Vec::len).sum();
        if total == 0 {
            return 1.0;
        }
        self.accepted.iter().flatten().filter(|&&a| a).count() as f64 / total as f64
    }

    pub fn stratum_ratios(&self) -> Option<BTreeMap<Stratum, f64>> {
        if self.blocks.iter().any(Option::is_none) {
            return None;
        }
        Some(
            self.blocks
                .iter()
                .enumerate()
                .map(|(b, s)| (s.expect("stratum block"), self.block_ratio(b)))
                .collect(),
        )
    }

    /// Non-overlapping windows (start offset, block, ratio) with acceptance
    /// below `threshold`. A trace shorter than one window is scanned whole.
    pub fn low_windows(&self, window: usize, threshold: f64) -> Vec<(usize, Option<Stratum>, f64)> {
        let n = self.iterations();
        let window = window.min(n).max(1);
        let mut out = Vec::new();
        let mut start = 0;
        while start + window <= n {
            for (b, &label) in self.blocks.iter().enumerate() {
                let r = self.ratio_over(start..start + window, b);
                if r < threshold {
                    out.push((start, label, r));
                }
            }
            start += window;
        }
        out
    }
}

/// Parameter values at one retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub iteration: usize,
    pub theta: [f64; 3],
    pub outcome: Vec<f64>,
    pub response: Vec<f64>,
    pub completed_totals: BTreeMap<Stratum, f64>,
    pub accepted: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub method: Method,
    /// One completed dataset per retained iteration.
    pub datasets: Vec<SurveySample>,
    pub trace: AcceptanceTrace,
    pub draws: Vec<ParameterDraw>,
    pub outcome_terms: ProbitTerms,
    pub response_terms: ProbitTerms,
    /// The margin in force after burn-in (differs from the input only when
    /// the variance was refreshed).
    pub margin: Option<AuxiliaryMargin>,
    pub warnings: Vec<String>,
}

/// Pattern bookkeeping for the two probit updates. Respondent counts are fixed;
/// nonrespondents are added each iteration from the current imputations.
struct Designs {
    outcome_rows: Vec<Vec<f64>>,
    outcome_base: Vec<(u64, u64)>,
    slot_outcome: Vec<usize>,
    response_rows: Vec<Vec<f64>>,
    response_base: Vec<(u64, u64)>,
    /// Response pattern of each slot for x = 0; x = 1 adds `x_stride`.
    slot_response: Vec<usize>,
    x_stride: usize,
}

impl Designs {
    fn new(sample: &SurveySample, target: &ImputationTarget, outcome: &ProbitTerms, response: &ProbitTerms) -> Self {
        let strata = target.strata();
        let k = strata.len();
        let pos = |s: Stratum| strata.binary_search(&s).expect("stratum in design");

        let mut outcome_rows = Vec::with_capacity(3 * k);
        for y in 1..=3u8 {
            for &s in strata {
                outcome_rows.push(outcome.row(y, 0, s));
            }
        }
        let x_stride = if response.x { 3 } else { 0 };
        let mut response_rows = Vec::new();
        for x in 0..=u8::from(response.x) {
            for y in 1..=3u8 {
                response_rows.push(response.row(y, x, strata[0]));
            }
        }

        let mut outcome_base = vec![(0, 0); outcome_rows.len()];
        let mut response_base = vec![(0, 0); response_rows.len()];
        for u in sample.units() {
            if let Some(x) = u.x {
                let o = usize::from(u.y - 1) * k + pos(u.stratum);
                if x == 1 {
                    outcome_base[o].0 += 1;
                } else {
                    outcome_base[o].1 += 1;
                }
                let r = usize::from(u.y - 1) + if x == 1 { x_stride } else { 0 };
                response_base[r].1 += 1;
            }
        }
        let (slot_outcome, slot_response) = target
            .slot_keys()
            .map(|(y, s)| (usize::from(y - 1) * k + pos(s), usize::from(y - 1)))
            .unzip();
        Self {
            outcome_rows,
            outcome_base,
            slot_outcome,
            response_rows,
            response_base,
            slot_response,
            x_stride,
        }
    }

    fn outcome(&self, imputations: &[u8]) -> BinaryPatterns {
        let mut counts = self.outcome_base.clone();
        for (&k, &x) in self.slot_outcome.iter().zip(imputations) {
            if x == 1 {
                counts[k].0 += 1;
            } else {
                counts[k].1 += 1;
            }
        }
        patterns(&self.outcome_rows, &counts)
    }

    fn response(&self, imputations: &[u8]) -> BinaryPatterns {
        let mut counts = self.response_base.clone();
        for (&k, &x) in self.slot_response.iter().zip(imputations) {
            counts[k + if x == 1 { self.x_stride } else { 0 }].0 += 1;
        }
        patterns(&self.response_rows, &counts)
    }
}

fn patterns(rows: &[Vec<f64>], counts: &[(u64, u64)]) -> BinaryPatterns {
    let mut p = BinaryPatterns::new(rows.first().map_or(0, Vec::len));
    for (row, &(ones, zeros)) in rows.iter().zip(counts) {
        if ones + zeros > 0 {
            p.push(row, ones, zeros);
        }
    }
    p
}

fn refreshed_margin(margin: &AuxiliaryMargin, collected: &[BTreeMap<Stratum, f64>]) -> Result<AuxiliaryMargin> {
    let n = collected.len() as f64;
    let mean = |s: Stratum| collected.iter().map(|v| v[&s]).sum::<f64>() / n;
    match margin {
        AuxiliaryMargin::Overall { total, .. } => {
            let v = collected.iter().map(|v| v.values().sum::<f64>()).sum::<f64>() / n;
            AuxiliaryMargin::overall(*total, v)
        }
        AuxiliaryMargin::PerStratum(m) => AuxiliaryMargin::per_stratum(
            m.iter()
                .map(|(&s, sm)| {
                    let mut sm = *sm;
                    sm.variance = mean(s);
                    (s, sm)
                })
                .collect(),
        ),
    }
}

/// Runs one chain and returns the completed datasets from the retained
/// iterations with the acceptance trace and parameter draws.
///
/// A margin is required for constraint methods and ignored otherwise.
pub fn run_chain(
    sample: &SurveySample,
    margin: Option<&AuxiliaryMargin>,
    settings: &ChainSettings,
) -> Result<ChainOutput> {
    settings.validate()?;
    let method = settings.method;
    let mut margin = match (method.uses_constraint(), margin) {
        (true, None) => return Err(Error::Config(format!("{method} requires a margin"))),
        (true, Some(m)) => {
            m.check_against(sample)?;
            Some(m.clone())
        }
        (false, _) => None,
    };

    let mut rng = rng_from_seed(settings.seed);
    let target = ImputationTarget::new(sample);
    let outcome_terms = method.outcome_terms(sample);
    let response_terms = method.response_terms();
    let designs = Designs::new(sample, &target, &outcome_terms, &response_terms);
    let mut y_counts = [0u64; 3];
    for u in sample.units() {
        y_counts[usize::from(u.y - 1)] += 1;
    }

    let mut state = ChainState::initial(sample, &target, method, &mut rng);
    let mut outcome_beta = vec![0.0; outcome_terms.len()];
    let mut response_beta = vec![0.0; response_terms.len()];

    let blocks: Vec<Option<Stratum>> = match &margin {
        Some(AuxiliaryMargin::PerStratum(_)) => target.strata().iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    let mut trace = AcceptanceTrace {
        constrained: margin.is_some(),
        blocks,
        accepted: Vec::with_capacity(settings.iterations - settings.burn_in),
    };
    let mut datasets = Vec::with_capacity(settings.retained());
    let mut draws = Vec::with_capacity(settings.retained());
    let mut warnings = Vec::new();
    let mut burn_in_variances = Vec::new();

    for t in 1..=settings.iterations {
        let flags = metropolis_imputation_step(&mut state, &target, margin.as_ref(), method, &mut rng)?;
        state.theta = update_theta(y_counts, [1.0; 3], &mut rng)?;
        outcome_beta = update_probit_coefficients(&designs.outcome(&state.imputations), &outcome_beta, &mut rng)?;
        state.outcome_coef = outcome_terms.coefficients(&outcome_beta);
        response_beta = update_probit_coefficients(&designs.response(&state.imputations), &response_beta, &mut rng)?;
        state.response_coef = response_terms.coefficients(&response_beta);

        if t <= settings.burn_in {
            if settings.refresh_margin_variance && margin.is_some() {
                if t % settings.thin == 0 {
                    match ht_variance_by_stratum(&sample.completed_with(&state.imputations)?, true) {
                        Ok(v) => burn_in_variances.push(v),
                        Err(e) => warnings.push(format!("iteration {t}: margin variance not refreshed: {e}")),
                    }
                }
                if t == settings.burn_in {
                    if burn_in_variances.is_empty() {
                        warnings.push("no burn-in datasets available to refresh the margin variance".into());
                    } else {
                        match refreshed_margin(margin.as_ref().expect("margin"), &burn_in_variances) {
                            Ok(m) => margin = Some(m),
                            Err(e) => warnings.push(format!("margin variance not refreshed: {e}")),
                        }
                    }
                }
            }
            continue;
        }
        if settings.is_retained(t) {
            datasets.push(sample.completed_with(&state.imputations)?);
            draws.push(ParameterDraw {
                iteration: t,
                theta: state.theta,
                outcome: outcome_beta.clone(),
                response: response_beta.clone(),
                completed_totals: state.completed_totals.clone(),
                accepted: flags.clone(),
            });
        }
        trace.accepted.push(flags);
    }

    if trace.constrained {
        for (start, block, r) in trace.low_windows(WARNING_WINDOW, LOW_ACCEPTANCE) {
            let what = block.map_or("imputation vector".to_string(), |s| format!("stratum {s}"));
            let first = settings.burn_in + start + 1;
            warnings.push(format!(
                "{method}: acceptance ratio {r:.3} for the {what} over iterations {first}..{}; consider a larger margin variance",
                first + WARNING_WINDOW.min(trace.iterations()) - 1
            ));
        }
    }

    Ok(ChainOutput {
        method,
        datasets,
        trace,
        draws,
        outcome_terms,
        response_terms,
        margin,
        warnings,
    })
}

fn column_name(prefix: &str, term: &str) -> String {
    if term == "(Intercept)" {
        format!("{prefix}_0")
    } else {
        format!("{prefix}_{term}")
    }
}

/// Writes one CSV row per retained draw: parameters, completed totals, and
/// acceptance flags.
pub fn write_trace_csv<W: Write>(output: &ChainOutput, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let strata: Vec<Stratum> = output
        .draws
        .first()
        .map(|d| d.completed_totals.keys().copied().collect())
        .unwrap_or_default();
    let mut header = vec!["iteration".to_string(), "theta1".into(), "theta2".into(), "theta3".into()];
    header.extend(output.outcome_terms.names().iter().map(|n| column_name("alpha", n)));
    header.extend(output.response_terms.names().iter().map(|n| column_name("gamma", n)));
    header.extend(strata.iter().map(|s| format!("total_stratum{s}")));
    header.push("total".into());
    header.extend(output.trace.blocks.iter().map(|b| match b {
        Some(s) => format!("accepted_stratum{s}"),
        None => "accepted".into(),
    }));
    w.write_record(&header)?;
    for d in &output.draws {
        let mut rec = vec![d.iteration.to_string()];
        rec.extend(d.theta.iter().map(f64::to_string));
        rec.extend(d.outcome.iter().map(f64::to_string));
        rec.extend(d.response.iter().map(f64::to_string));
        rec.extend(d.completed_totals.values().map(f64::to_string));
        rec.push(d.completed_totals.values().sum::<f64>().to_string());
        rec.extend(d.accepted.iter().map(|&a| u8::from(a).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
