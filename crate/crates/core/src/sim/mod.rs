//! Simulation-study harness: scenario definitions, the replication loop, and
//! report writers.
//!
//! Each run draws a fresh finite population, a stratified sample, and
//! nonresponse, then imputes with every requested method and analyses the L
//! completed datasets. Run-level multiple-imputation estimates are averaged
//! across runs.

mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    emit_report, read_manifest, read_parameters_csv, read_report_json, read_totals_csv,
    ParameterRow, ParametersTable, ReportFormat, ScenarioManifest, TotalsRow, TotalsTable,
};

use crate::error::{Error, Result};
use crate::estimators::{
    aggregate_runs, ht_with_se, rubin_combine, unweighted_probit_fit, weighted_probit_fit,
    MIEstimate, VarianceConvention,
};
use crate::mcmc::{run_chain, ChainSettings, Method};
use crate::models::{ProbitCoefficients, ProbitTerms};
use crate::seed::{derive_seed, tag};
use crate::survey::{
    draw_stratified_sample, generate_population, impose_missingness, margin_from_population,
    population_total, MarginScope, Stratum, SurveySample,
};

/// Master seed shared by the built-in scenarios. Scenarios that differ only
/// in margin scope therefore see the same populations and samples.
pub const DEFAULT_MASTER_SEED: u64 = 20_210_415;

/// Name of the design-based total in estimate maps.
pub const TOTAL: &str = "T_X";

/// Model parameters in report order.
pub const PARAMETERS: [&str; 7] = [
    "alpha_0", "alpha_y2", "alpha_y3", "gamma_0", "gamma_y2", "gamma_y3", "gamma_x",
];

/// JSON Schema for [`ScenarioConfig`] files.
pub const CONFIG_SCHEMA: &str = include_str!("scenario.schema.json");

/// Population and sample size of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSize {
    pub population: usize,
    pub sample: usize,
}

/// MCMC schedule applied to every chain of a scenario. Method and seed are
/// filled in per chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSchedule {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(default)]
    pub refresh_margin_variance: bool,
}

impl Default for ChainSchedule {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 100,
            refresh_margin_variance: false,
        }
    }
}

impl ChainSchedule {
    pub fn settings(&self, method: Method, seed: u64) -> ChainSettings {
        let mut s = ChainSettings::new(method, seed).with_schedule(self.iterations, self.burn_in, self.thin);
        s.refresh_margin_variance = self.refresh_margin_variance;
        s
    }

    pub fn retained(&self) -> usize {
        self.settings(Method::MarWeight, 0).retained()
    }
}

fn default_runs() -> usize {
    10
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Category probabilities of `y` in each stratum.
    pub theta_by_stratum: BTreeMap<Stratum, [f64; 3]>,
    /// (α0, α12, α13)
    pub alpha: [f64; 3],
    /// (γ0, γ12, γ13, γ2)
    pub gamma: [f64; 4],
    pub strata: BTreeMap<Stratum, StratumSize>,
    pub margin_scope: MarginScope,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub chain: ChainSchedule,
    pub master_seed: u64,
    #[serde(default)]
    pub variance_convention: VarianceConvention,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Config("scenario id is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort_by_key(|m| m.code());
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("methods listed more than once".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.strata.is_empty() {
            return Err(Error::Config("no strata".into()));
        }
        for (s, size) in &self.strata {
            if !self.theta_by_stratum.contains_key(s) {
                return Err(Error::Config(format!("no category probabilities for stratum {s}")));
            }
            if size.sample < 2 || size.sample > size.population {
                return Err(Error::Config(format!(
                    "stratum {s}: need 2 ≤ n_s ≤ N_s, got n_s = {} and N_s = {}",
                    size.sample, size.population
                )));
            }
        }
        if let Some(s) = self.theta_by_stratum.keys().find(|s| !self.strata.contains_key(s)) {
            return Err(Error::Config(format!("stratum {s} has probabilities but no sizes")));
        }
        if self.alpha.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        self.chain.settings(Method::MarWeight, 0).validate()
    }

    pub fn alpha_coefficients(&self) -> ProbitCoefficients {
        ProbitCoefficients::new(self.alpha[0], self.alpha[1], self.alpha[2])
    }

    pub fn gamma_coefficients(&self) -> ProbitCoefficients {
        ProbitCoefficients::new(self.gamma[0], self.gamma[1], self.gamma[2]).with_x(self.gamma[3])
    }

    /// True parameter values keyed as in [`PARAMETERS`].
    pub fn truth(&self) -> BTreeMap<String, f64> {
        PARAMETERS
            .iter()
            .zip(self.alpha.iter().chain(&self.gamma))
            .map(|(k, &v)| (k.to_string(), v))
            .collect()
    }

    fn population_sizes(&self) -> BTreeMap<Stratum, usize> {
        self.strata.iter().map(|(&s, z)| (s, z.population)).collect()
    }

    fn sample_sizes(&self) -> BTreeMap<Stratum, usize> {
        self.strata.iter().map(|(&s, z)| (s, z.sample)).collect()
    }

    /// A copy with every stratum's N_s and n_s divided by `factor` and the
    /// given chain schedule.
    pub fn scaled(&self, id: &str, factor: usize, chain: ChainSchedule) -> Self {
        let mut c = self.clone();
        c.id = id.to_string();
        c.description = format!("{} (1/{factor} scale)", self.description);
        for z in c.strata.values_mut() {
            z.population /= factor;
            z.sample /= factor;
        }
        c.chain = chain;
        c
    }
}

/// Desk-scale chain schedule: 4000 iterations, 2000 burn-in, thin 40.
pub const DESK_SCHEDULE: ChainSchedule = ChainSchedule {
    iterations: 4_000,
    burn_in: 2_000,
    thin: 40,
    refresh_margin_variance: false,
};

/// The four detailed scenarios and a desk-scale variant of each.
pub fn builtin_scenarios() -> BTreeMap<String, ScenarioConfig> {
    let theta = BTreeMap::from([(1, [0.5, 0.15, 0.35]), (2, [0.1, 0.45, 0.45])]);
    let strata = BTreeMap::from([
        (1, StratumSize { population: 35_000, sample: 1_500 }),
        (2, StratumSize { population: 15_000, sample: 3_500 }),
    ]);
    let strong = ([0.5, -0.5, -1.0], [-0.25, 0.1, 0.3, -1.1]);
    let weak = ([0.15, -0.45, -0.15], [-1.0, -0.6, 1.4, -0.2]);
    let cells = [
        ("scenario1", strong, MarginScope::Overall, "strong association, strong nonignorability, overall margin"),
        ("scenario2", weak, MarginScope::Overall, "weak association, weak nonignorability, overall margin"),
        ("scenario3", strong, MarginScope::PerStratum, "strong association, strong nonignorability, per-stratum margins"),
        ("scenario4", weak, MarginScope::PerStratum, "weak association, weak nonignorability, per-stratum margins"),
    ];
    let mut out = BTreeMap::new();
    for (id, (alpha, gamma), scope, description) in cells {
        let full = ScenarioConfig {
            id: id.to_string(),
            description: description.to_string(),
            theta_by_stratum: theta.clone(),
            alpha,
            gamma,
            strata: strata.clone(),
            margin_scope: scope,
            methods: default_methods(),
            runs: default_runs(),
            chain: ChainSchedule::default(),
            master_seed: DEFAULT_MASTER_SEED,
            variance_convention: VarianceConvention::default(),
        };
        let desk_id = format!("{id}-desk");
        out.insert(desk_id.clone(), full.scaled(&desk_id, 5, DESK_SCHEDULE));
        out.insert(id.to_string(), full);
    }
    out
}

/// Every seed used by one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: usize,
    pub seed: u64,
    pub population: u64,
    pub sample: u64,
    pub missingness: u64,
    /// Chain seed keyed by method code.
    pub chains: BTreeMap<String, u64>,
}

impl RunSeeds {
    pub fn derive(master_seed: u64, run: usize, methods: &[Method]) -> Self {
        let seed = derive_seed(master_seed, &[run as u64]);
        Self {
            run,
            seed,
            population: derive_seed(seed, &[tag("population")]),
            sample: derive_seed(seed, &[tag("sample")]),
            missingness: derive_seed(seed, &[tag("missingness")]),
            chains: methods
                .iter()
                .map(|m| (m.code().to_string(), derive_seed(seed, &[tag("chain"), tag(m.code())])))
                .collect(),
        }
    }
}

/// A point estimate with its variance, from one analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub point: f64,
    pub variance: f64,
}

/// One method's results within one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    /// MI estimates keyed by [`TOTAL`] and [`PARAMETERS`]; a quantity is
    /// absent when the method does not estimate it or a fit failed.
    pub estimates: BTreeMap<String, MIEstimate>,
    /// Post-burn-in acceptance ratio per block (`overall` or `stratum<s>`);
    /// empty for unconstrained methods.
    pub acceptance: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Everything recorded for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seeds: RunSeeds,
    pub population_total: f64,
    pub missing: usize,
    /// Estimates from the sample before nonresponse.
    pub no_missing_data: BTreeMap<String, PointEstimate>,
    pub methods: Vec<MethodRun>,
}

/// Run-averaged estimate: mean of the point estimates and the square root of
/// the mean variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    /// Number of runs that produced the quantity.
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl AcceptanceSummary {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub estimates: BTreeMap<String, Estimate>,
    pub acceptance: BTreeMap<String, AcceptanceSummary>,
}

impl MethodSummary {
    pub fn total(&self) -> Option<Estimate> {
        self.estimates.get(TOTAL).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    /// Mean over runs of the population total of `x`.
    pub population_total: f64,
    /// Mean share of sampled units with `x` missing.
    pub missing_rate: f64,
    pub no_missing_data: BTreeMap<String, Estimate>,
    pub methods: Vec<MethodSummary>,
    pub runs: Vec<RunOutcome>,
    /// Chain and estimator warnings, prefixed with run and method.
    pub warnings: Vec<String>,
}

impl ScenarioReport {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Run-averaged total minus the run-averaged population total.
    pub fn bias(&self, method: Method) -> Option<f64> {
        Some(self.method(method)?.total()?.mean - self.population_total)
    }
}

/// Acceptance block label: `overall` or `stratum<s>`.
pub fn block_label(block: Option<Stratum>) -> String {
    block.map_or_else(|| "overall".to_string(), |s| format!("stratum{s}"))
}

type Fitted = std::result::Result<PointEstimate, String>;

fn push_fit(
    out: &mut BTreeMap<String, Vec<Fitted>>,
    names: &[&str],
    fit: Result<crate::estimators::FitResult>,
) {
    match fit {
        Ok(f) => {
            for (i, name) in names.iter().enumerate().take(f.coefficients.len()) {
                out.entry(name.to_string()).or_default().push(Ok(PointEstimate {
                    point: f.coefficients[i],
                    variance: f.standard_errors[i] * f.standard_errors[i],
                }));
            }
        }
        Err(e) => {
            let msg = e.to_string();
            for name in names {
                out.entry(name.to_string())
                    .or_default()
                    .push(Err(msg.clone()));
            }
        }
    }
}

/// Completed-data analyses of one dataset: HT total, weighted probit of x on
/// y, and unweighted probit of the response indicator.
fn analyse(
    dataset: &SurveySample,
    responses: &[u8],
    response_terms: &ProbitTerms,
    convention: VarianceConvention,
    out: &mut BTreeMap<String, Vec<Fitted>>,
) {
    let total = ht_with_se(dataset, convention)
        .map(|(t, se)| PointEstimate { point: t, variance: se * se })
        .map_err(|e| e.to_string());
    out.entry(TOTAL.to_string()).or_default().push(total);
    push_fit(out, &PARAMETERS[..3], weighted_probit_fit(dataset, &ProbitTerms::base(), convention));
    let gamma_names: &[&str] = if response_terms.x { &PARAMETERS[3..] } else { &PARAMETERS[3..6] };
    push_fit(out, gamma_names, unweighted_probit_fit(dataset, responses, response_terms));
}

/// Multiple-imputation estimates of the total and of every model parameter
/// from completed datasets, with warnings for quantities left out.
///
/// A quantity is combined only if its fit succeeds on every dataset, so each
/// estimate uses all L datasets.
pub fn mi_estimates(
    datasets: &[SurveySample],
    responses: &[u8],
    response_terms: &ProbitTerms,
    convention: VarianceConvention,
) -> (BTreeMap<String, MIEstimate>, Vec<String>) {
    let mut per_quantity = BTreeMap::new();
    for d in datasets {
        analyse(d, responses, response_terms, convention, &mut per_quantity);
    }
    let mut estimates = BTreeMap::new();
    let mut warnings = Vec::new();
    for (name, results) in per_quantity {
        let failed = results.iter().filter(|r| r.is_err()).count();
        if let Some(Err(e)) = results.iter().find(|r| r.is_err()) {
            warnings.push(format!("{name} dropped: {failed} of {} fits failed: {e}", results.len()));
            continue;
        }
        let (q, u): (Vec<f64>, Vec<f64>) = results.iter().flatten().map(|p| (p.point, p.variance)).unzip();
        match rubin_combine(&q, &u) {
            Ok(e) => {
                estimates.insert(name, e);
            }
            Err(e) => warnings.push(format!("{name} not combined: {e}")),
        }
    }
    (estimates, warnings)
}

/// Executes a single run. Runs are independent, so any run of a scenario can
/// be reproduced on its own.
pub fn run_one(config: &ScenarioConfig, run: usize) -> Result<RunOutcome> {
    config.validate()?;
    let seeds = RunSeeds::derive(config.master_seed, run, &config.methods);
    let pop = generate_population(
        &config.theta_by_stratum,
        &config.alpha_coefficients(),
        &config.population_sizes(),
        seeds.population,
    )?;
    let draws = config.sample_sizes();
    let full = draw_stratified_sample(&pop, &draws, seeds.sample)?;
    let (masked, sealed) = impose_missingness(&full, &config.gamma_coefficients(), seeds.missingness)?;
    let margin = margin_from_population(&pop, &draws, config.margin_scope)?;
    let responses: Vec<u8> = masked.units().iter().map(|u| u.r()).collect();
    let convention = config.variance_convention;

    let no_missing_data = score_against_truth(&sealed.restore(&masked)?, &responses, convention);

    let methods = config
        .methods
        .par_iter()
        .map(|&method| {
            let settings = config.chain.settings(method, seeds.chains[method.code()]);
            let out = run_chain(&masked, Some(&margin), &settings).map_err(|e| Error::Chain {
                context: format!("run {run}, {method} (chain seed {})", settings.seed),
                source: Box::new(e),
            })?;
            let prefix = format!("run {run}, {method}");
            let mut warnings: Vec<String> = out.warnings.iter().map(|w| format!("{prefix}: {w}")).collect();
            let (estimates, fit_warnings) = mi_estimates(&out.datasets, &responses, &out.response_terms, convention);
            warnings.extend(fit_warnings.into_iter().map(|w| format!("{prefix}: {w}")));
            let acceptance = if out.trace.constrained {
                out.trace
                    .blocks
                    .iter()
                    .enumerate()
                    .map(|(b, &s)| (block_label(s), out.trace.block_ratio(b)))
                    .collect()
            } else {
                BTreeMap::new()
            };
            Ok(MethodRun { method, estimates, acceptance, warnings })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RunOutcome {
        seeds,
        population_total: population_total(&pop),
        missing: masked.missing_count(),
        no_missing_data,
        methods,
    })
}

/// The "No Missing Data" benchmark: the same analyses applied to the sample
/// with the sealed values restored, and the response model fit with the true
/// `x`. Failed fits are left out.
fn score_against_truth(
    full: &SurveySample,
    responses: &[u8],
    convention: VarianceConvention,
) -> BTreeMap<String, PointEstimate> {
    let mut per = BTreeMap::new();
    analyse(full, responses, &ProbitTerms::base().with_x(), convention, &mut per);
    per.into_iter()
        .filter_map(|(k, mut v)| v.pop().and_then(|r| r.ok()).map(|p| (k, p)))
        .collect()
}

/// Runs every replication of a scenario and aggregates the results.
///
/// Runs and methods execute on the current rayon pool; aggregation folds the
/// runs in order, so the report does not depend on scheduling.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let runs = (0..config.runs)
        .into_par_iter()
        .map(|m| run_one(config, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(config.clone(), runs))
}

fn average(points: &[PointEstimate]) -> Option<Estimate> {
    if points.is_empty() {
        return None;
    }
    let m = points.len() as f64;
    Some(Estimate {
        mean: points.iter().map(|p| p.point).sum::<f64>() / m,
        se: (points.iter().map(|p| p.variance).sum::<f64>() / m).sqrt(),
        runs: points.len(),
    })
}

/// Aggregates run outcomes into a report.
pub fn summarize(config: ScenarioConfig, runs: Vec<RunOutcome>) -> ScenarioReport {
    let m = runs.len().max(1) as f64;
    let population_total = runs.iter().map(|r| r.population_total).sum::<f64>() / m;
    let sample_size: usize = config.strata.values().map(|z| z.sample).sum();
    let missing_rate = runs.iter().map(|r| r.missing as f64 / sample_size as f64).sum::<f64>() / m;

    let mut warnings = Vec::new();
    let names: Vec<&str> = std::iter::once(TOTAL).chain(PARAMETERS).collect();
    let mut no_missing_data = BTreeMap::new();
    for name in &names {
        let points: Vec<PointEstimate> = runs.iter().filter_map(|r| r.no_missing_data.get(*name).copied()).collect();
        if let Some(e) = average(&points) {
            no_missing_data.insert(name.to_string(), e);
        }
    }

    let mut methods = Vec::new();
    for (i, &method) in config.methods.iter().enumerate() {
        let per_run: Vec<&MethodRun> = runs.iter().map(|r| &r.methods[i]).collect();
        debug_assert!(per_run.iter().all(|r| r.method == method));
        for r in &per_run {
            warnings.extend(r.warnings.iter().cloned());
        }
        let mut estimates = BTreeMap::new();
        for name in &names {
            let found: Vec<MIEstimate> = per_run.iter().filter_map(|r| r.estimates.get(*name).copied()).collect();
            if let Ok((mean, se)) = aggregate_runs(&found) {
                estimates.insert(name.to_string(), Estimate { mean, se, runs: found.len() });
            }
        }
        let mut acceptance: BTreeMap<String, AcceptanceSummary> = BTreeMap::new();
        let blocks: Vec<String> = per_run.first().map(|r| r.acceptance.keys().cloned().collect()).unwrap_or_default();
        for block in blocks {
            let ratios: Vec<f64> = per_run.iter().filter_map(|r| r.acceptance.get(&block).copied()).collect();
            let n = ratios.len() as f64;
            acceptance.insert(
                block,
                AcceptanceSummary {
                    mean: ratios.iter().sum::<f64>() / n,
                    min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
                    max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                },
            );
        }
        methods.push(MethodSummary { method, estimates, acceptance });
    }

    ScenarioReport {
        config,
        population_total,
        missing_rate,
        no_missing_data,
        methods,
        runs,
        warnings,
    }
}
