use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use super::VarianceConvention;
use crate::error::{Error, Result};
use crate::models::ProbitTerms;
use crate::normal;
use crate::survey::{Stratum, SurveySample};

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 30;
/// Coefficient norm beyond which the fit is declared separated.
pub const SEPARATION_NORM: f64 = 50.0;
/// Linear predictor magnitude at which a fitted probability is numerically 0
/// or 1 (within about 1e-9). The probit score vanishes there long before the
/// coefficients reach [`SEPARATION_NORM`], so this also flags separation.
pub const SEPARATION_ETA: f64 = 6.0;

/// A fitted probit model. Serializes with coefficients and standard errors
/// keyed by term name, in design order.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl FitResult {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }

    pub fn standard_error(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.standard_errors[i])
    }
}

struct Named<'a>(&'a [String], &'a [f64]);

impl Serialize for Named<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0.iter().zip(self.1) {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl Serialize for FitResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(4))?;
        map.serialize_entry("coefficients", &Named(&self.terms, &self.coefficients))?;
        map.serialize_entry("standard_errors", &Named(&self.terms, &self.standard_errors))?;
        map.serialize_entry("converged", &self.converged)?;
        map.serialize_entry("iterations_used", &self.iterations_used)?;
        map.end()
    }
}

/// Binary-response data for a probit fit, one row per unit.
#[derive(Debug, Clone)]
pub struct ProbitData {
    pub dim: usize,
    pub rows: Vec<f64>,
    pub response: Vec<u8>,
    pub weights: Vec<f64>,
}

impl ProbitData {
    pub fn new(rows: Vec<Vec<f64>>, response: Vec<u8>, weights: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != response.len() || rows.len() != weights.len() {
            return Err(Error::Arity("rows, responses and weights differ in length".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Arity("design rows differ in length".into()));
        }
        if response.iter().any(|&r| r > 1) {
            return Err(Error::ParameterDomain("probit responses must be 0 or 1".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::ParameterDomain("weights must be positive and finite".into()));
        }
        Ok(Self {
            dim,
            rows: rows.concat(),
            response,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Weighted probit log-likelihood.
    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let eta = self.eta(i, beta);
                let s = if self.response[i] == 1 { eta } else { -eta };
                self.weights[i] * normal::log_cdf(s)
            })
            .sum()
    }

    /// d ln L_i / dη for unit i: the signed inverse Mills ratio.
    fn lambda(&self, i: usize, eta: f64) -> f64 {
        if self.response[i] == 1 {
            normal::inverse_mills(eta)
        } else {
            -normal::inverse_mills(-eta)
        }
    }

    /// Weighted score and information matrix −∂²ℓ/∂β∂β'.
    fn score_information(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut score = DVector::zeros(d);
        let mut info = DMatrix::zeros(d, d);
        for i in 0..self.len() {
            let eta = self.eta(i, beta);
            let lam = self.lambda(i, eta);
            let w = self.weights[i];
            let row = self.row(i);
            let c = w * lam * (lam + eta);
            for a in 0..d {
                score[a] += w * lam * row[a];
                for b in 0..=a {
                    info[(a, b)] += c * row[a] * row[b];
                }
            }
        }
        info.fill_upper_triangle_with_lower_triangle();
        (score, info)
    }

    /// Per-unit score contributions wᵢλᵢxᵢ.
    pub fn unit_scores(&self, beta: &[f64]) -> Vec<DVector<f64>> {
        (0..self.len())
            .map(|i| {
                let eta = self.eta(i, beta);
                DVector::from_column_slice(self.row(i)) * (self.weights[i] * self.lambda(i, eta))
            })
            .collect()
    }
}

/// Raw pseudo-ML solution with the information matrix at the optimum.
#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub beta: Vec<f64>,
    pub information: DMatrix<f64>,
    pub max_score: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Damped Newton iterations on the weighted log-likelihood from β = 0.
pub fn solve_probit(data: &ProbitData) -> Result<NewtonSolution> {
    if data.is_empty() {
        return Err(Error::SingularDesign);
    }
    if data.response.iter().all(|&r| r == data.response[0]) {
        return Err(Error::Separation { norm: f64::INFINITY });
    }
    let mut beta = vec![0.0; data.dim];
    let mut ll = data.log_likelihood(&beta);
    let mut iterations = 0;
    loop {
        let (score, info) = data.score_information(&beta);
        let max_score = score.amax();
        if max_score < SCORE_TOLERANCE || iterations == MAX_ITERATIONS {
            return Ok(NewtonSolution {
                beta,
                information: info,
                max_score,
                converged: max_score < SCORE_TOLERANCE,
                iterations,
            });
        }
        iterations += 1;
        let step = info.clone().cholesky().ok_or(Error::SingularDesign)?.solve(&score);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let trial_ll = data.log_likelihood(&trial);
            if trial_ll >= ll {
                accepted = Some((trial, trial_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            // No ascent at any step length: we are at the optimum to rounding.
            let (score, info) = data.score_information(&beta);
            let max_score = score.amax();
            return Ok(NewtonSolution {
                beta,
                information: info,
                max_score,
                converged: max_score < SCORE_TOLERANCE,
                iterations,
            });
        };
        let norm = next.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
        beta = next;
        ll = next_ll;
    }
}

fn check_separation(data: &ProbitData, beta: &[f64]) -> Result<()> {
    let max_eta = (0..data.len()).map(|i| data.eta(i, beta).abs()).fold(0.0, f64::max);
    if max_eta > SEPARATION_ETA {
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        return Err(Error::Separation { norm });
    }
    Ok(())
}

fn invert(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    info.clone().cholesky().map(|c| c.inverse()).ok_or(Error::SingularDesign)
}

fn sqrt_diagonal(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)].max(0.0).sqrt()).collect()
}

/// Taylor-linearization covariance J⁻¹GJ⁻¹ for stratified sampling, where G
/// sums over strata `n_s/(n_s − 1) · fpc_s · Σ (uᵢ − ū_s)(uᵢ − ū_s)'` of the
/// unit score contributions uᵢ.
pub fn linearization_covariance(
    data: &ProbitData,
    solution: &NewtonSolution,
    strata: &[Stratum],
    sample: &SurveySample,
    convention: VarianceConvention,
) -> Result<DMatrix<f64>> {
    let ones = vec![1.0; data.len()];
    grouped_linearization(data, solution, strata, &ones, sample, convention)
}

/// As [`linearization_covariance`], for data whose row `k` stands for
/// `counts[k]` identical units and carries their summed weight.
fn grouped_linearization(
    data: &ProbitData,
    solution: &NewtonSolution,
    strata: &[Stratum],
    counts: &[f64],
    sample: &SurveySample,
    convention: VarianceConvention,
) -> Result<DMatrix<f64>> {
    let d = data.dim;
    let scores = data.unit_scores(&solution.beta);
    let mut groups: BTreeMap<Stratum, Vec<(f64, DVector<f64>)>> = BTreeMap::new();
    for ((s, u), &c) in strata.iter().zip(scores).zip(counts) {
        groups.entry(*s).or_default().push((c, u / c));
    }
    let mut g = DMatrix::zeros(d, d);
    for (s, us) in groups {
        let n_units: f64 = us.iter().map(|(c, _)| c).sum();
        let n = n_units.round() as usize;
        if n < 2 {
            return Err(Error::VarianceUndefined { stratum: s, draws: n });
        }
        let design = sample
            .design()
            .get(&s)
            .ok_or_else(|| Error::Design(format!("stratum {s} not in design")))?;
        let fpc = match convention {
            VarianceConvention::WithoutReplacement => 1.0 - n_units / design.population_size,
            VarianceConvention::WithReplacement => 1.0,
        };
        let mean = us.iter().fold(DVector::zeros(d), |acc, (c, u)| acc + u * *c) / n_units;
        let mut ss = DMatrix::zeros(d, d);
        for (c, u) in &us {
            let dev = u - &mean;
            ss += (&dev * dev.transpose()) * *c;
        }
        g += ss * (fpc * n_units / (n_units - 1.0));
    }
    let j_inv = invert(&solution.information)?;
    Ok(&j_inv * g * &j_inv)
}

fn check_rank(rows: &[Vec<f64>]) -> Result<()> {
    let d = rows.first().map_or(0, Vec::len);
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    crate::mcmc::check_full_rank(&(x.transpose() * x))
}

/// Units collapsed to distinct (row, response, weight, stratum) patterns.
struct Grouped {
    data: ProbitData,
    counts: Vec<f64>,
    strata: Vec<Stratum>,
}

fn group_units(dataset: &SurveySample, terms: &ProbitTerms, responses: &[u8], weighted: bool) -> Result<Grouped> {
    let mut cells: BTreeMap<(Vec<u64>, u8, u64, Stratum), (Vec<f64>, f64, f64)> = BTreeMap::new();
    let mut row = vec![0.0; terms.len()];
    for (u, &r) in dataset.units().iter().zip(responses) {
        let x = match (terms.x, u.x) {
            (true, None) => return Err(Error::Incomplete { missing: dataset.missing_count() }),
            (_, x) => x.unwrap_or(0),
        };
        terms.fill_row(u.y, x, u.stratum, &mut row);
        let w = if weighted { u.weight } else { 1.0 };
        let key = (row.iter().map(|v| v.to_bits()).collect(), r, w.to_bits(), u.stratum);
        let cell = cells.entry(key).or_insert_with(|| (row.clone(), w, 0.0));
        cell.2 += 1.0;
    }
    let mut rows = Vec::with_capacity(cells.len());
    let mut response = Vec::with_capacity(cells.len());
    let mut weights = Vec::with_capacity(cells.len());
    let mut counts = Vec::with_capacity(cells.len());
    let mut strata = Vec::with_capacity(cells.len());
    for ((_, r, _, s), (row, w, c)) in cells {
        rows.push(row);
        response.push(r);
        weights.push(w * c);
        counts.push(c);
        strata.push(s);
    }
    check_rank(&rows)?;
    Ok(Grouped {
        data: ProbitData::new(rows, response, weights)?,
        counts,
        strata,
    })
}

/// Survey-weighted probit of `x` on the terms in `terms` (which must not
/// include `x`), with linearization standard errors.
pub fn weighted_probit_fit(
    dataset: &SurveySample,
    terms: &ProbitTerms,
    convention: VarianceConvention,
) -> Result<FitResult> {
    if terms.x {
        return Err(Error::Arity("x cannot be a covariate in its own model".into()));
    }
    if !dataset.is_complete() {
        return Err(Error::Incomplete { missing: dataset.missing_count() });
    }
    let response: Vec<u8> = dataset.units().iter().map(|u| u.x.unwrap_or(0)).collect();
    let g = group_units(dataset, terms, &response, true)?;
    let sol = solve_probit(&g.data)?;
    check_separation(&g.data, &sol.beta)?;
    let cov = grouped_linearization(&g.data, &sol, &g.strata, &g.counts, dataset, convention)?;
    Ok(FitResult {
        terms: terms.names(),
        coefficients: sol.beta.clone(),
        standard_errors: sqrt_diagonal(&cov),
        converged: sol.converged,
        iterations_used: sol.iterations,
    })
}

/// Unweighted probit ML of `responses` (one per unit, e.g. the response
/// indicator) on `terms`, evaluated with the dataset's `y`, `x`, and stratum.
/// Standard errors come from the inverse observed information.
pub fn unweighted_probit_fit(dataset: &SurveySample, responses: &[u8], terms: &ProbitTerms) -> Result<FitResult> {
    if responses.len() != dataset.len() {
        return Err(Error::Arity(format!(
            "{} responses for {} units",
            responses.len(),
            dataset.len()
        )));
    }
    let g = group_units(dataset, terms, responses, false)?;
    let sol = solve_probit(&g.data)?;
    check_separation(&g.data, &sol.beta)?;
    let cov = invert(&sol.information)?;
    Ok(FitResult {
        terms: terms.names(),
        coefficients: sol.beta.clone(),
        standard_errors: sqrt_diagonal(&cov),
        converged: sol.converged,
        iterations_used: sol.iterations,
    })
}
