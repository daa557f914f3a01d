use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Stratum, StratifiedPopulation, SurveySample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginScope {
    Overall,
    PerStratum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumMargin {
    pub total: f64,
    pub variance: f64,
}

/// A known population total of `x` with the variance the completed-data
/// Horvitz–Thompson total is allowed around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AuxiliaryMargin {
    Overall { total: f64, variance: f64 },
    PerStratum(BTreeMap<Stratum, StratumMargin>),
}

impl AuxiliaryMargin {
    pub fn overall(total: f64, variance: f64) -> Result<Self> {
        check_variance(variance, "overall")?;
        if !total.is_finite() {
            return Err(Error::ParameterDomain("margin total must be finite".into()));
        }
        Ok(Self::Overall { total, variance })
    }

    pub fn per_stratum(margins: BTreeMap<Stratum, StratumMargin>) -> Result<Self> {
        if margins.is_empty() {
            return Err(Error::ParameterDomain("per-stratum margin has no strata".into()));
        }
        for (s, m) in &margins {
            check_variance(m.variance, &format!("stratum {s}"))?;
            if !(m.total >= 0.0) || !m.total.is_finite() {
                return Err(Error::ParameterDomain(format!(
                    "stratum {s} total {} is negative",
                    m.total
                )));
            }
        }
        Ok(Self::PerStratum(margins))
    }

    pub fn scope(&self) -> MarginScope {
        match self {
            Self::Overall { .. } => MarginScope::Overall,
            Self::PerStratum(_) => MarginScope::PerStratum,
        }
    }

    /// Checks per-stratum margins against a sample's design: every stratum
    /// covered and each total at most N_s.
    pub fn check_against(&self, sample: &SurveySample) -> Result<()> {
        if let Self::PerStratum(margins) = self {
            for (s, d) in sample.design() {
                let m = margins
                    .get(s)
                    .ok_or_else(|| Error::Config(format!("no margin declared for stratum {s}")))?;
                if m.total > d.population_size * (1.0 + 1e-12) {
                    return Err(Error::ParameterDomain(format!(
                        "stratum {s} total {} exceeds N_s = {}",
                        m.total, d.population_size
                    )));
                }
            }
            if let Some(extra) = margins.keys().find(|s| !sample.design().contains_key(s)) {
                return Err(Error::Config(format!("margin declared for unknown stratum {extra}")));
            }
        }
        Ok(())
    }
}

fn check_variance(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("{what} margin variance {v} must be positive")))
    }
}

/// Design variances of the Horvitz–Thompson total, overall or by stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarginVariance {
    Overall(f64),
    PerStratum(BTreeMap<Stratum, f64>),
}

/// Variance of the full-response Horvitz–Thompson total under stratified SRS
/// without replacement, from the population:
/// `V_s = N_s² (1 − n_s/N_s) S_s² / n_s`, with `S_s²` the stratum variance of
/// `x` (divisor `N_s − 1`). The overall variance is the sum over strata.
pub fn theoretical_margin_variance(
    pop: &StratifiedPopulation,
    draws: &BTreeMap<Stratum, usize>,
    scope: MarginScope,
) -> Result<MarginVariance> {
    let totals = pop.stratum_totals();
    let mut per = BTreeMap::new();
    for (&s, &big_n) in pop.stratum_sizes() {
        let n = *draws
            .get(&s)
            .ok_or_else(|| Error::Design(format!("no sample size for stratum {s}")))?;
        if big_n < 2 {
            return Err(Error::Design(format!("stratum {s} has N_s = {big_n} < 2")));
        }
        if n > big_n || n == 0 {
            return Err(Error::Design(format!("stratum {s}: n_s = {n} with N_s = {big_n}")));
        }
        let nf = big_n as f64;
        let ones = totals[&s];
        // x is binary: Σ(x − x̄)² = T(1 − T/N).
        let s2 = ones * (1.0 - ones / nf) / (nf - 1.0);
        let v = nf * nf * (1.0 - n as f64 / nf) * s2 / n as f64;
        per.insert(s, v.max(0.0));
    }
    Ok(match scope {
        MarginScope::Overall => MarginVariance::Overall(per.values().sum()),
        MarginScope::PerStratum => MarginVariance::PerStratum(per),
    })
}

/// Margin from a population's realized totals and the theoretical variance.
pub fn margin_from_population(
    pop: &StratifiedPopulation,
    draws: &BTreeMap<Stratum, usize>,
    scope: MarginScope,
) -> Result<AuxiliaryMargin> {
    match theoretical_margin_variance(pop, draws, scope)? {
        MarginVariance::Overall(v) => AuxiliaryMargin::overall(super::population_total(pop), v),
        MarginVariance::PerStratum(vs) => {
            let totals = pop.stratum_totals();
            AuxiliaryMargin::per_stratum(
                vs.into_iter()
                    .map(|(s, variance)| {
                        (
                            s,
                            StratumMargin {
                                total: totals[&s],
                                variance,
                            },
                        )
                    })
                    .collect(),
            )
        }
    }
}

/// On-disk margin declaration:
///
/// ```json
/// {"scope": "overall", "totals": {"overall": 25026}, "variances": {"overall": 206000}}
/// {"scope": "per-stratum", "totals": {"1": 18500, "2": 6500}, "variances": {"1": 190000, "2": 12000}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginDeclaration {
    pub scope: MarginScope,
    pub totals: BTreeMap<String, f64>,
    pub variances: BTreeMap<String, f64>,
}

impl TryFrom<MarginDeclaration> for AuxiliaryMargin {
    type Error = Error;

    fn try_from(decl: MarginDeclaration) -> Result<Self> {
        match decl.scope {
            MarginScope::Overall => {
                let total = decl.totals.get("overall");
                let variance = decl.variances.get("overall");
                match (total, variance, decl.totals.len(), decl.variances.len()) {
                    (Some(&t), Some(&v), 1, 1) => AuxiliaryMargin::overall(t, v),
                    _ => Err(Error::Config(
                        "overall margin needs exactly one \"overall\" total and variance".into(),
                    )),
                }
            }
            MarginScope::PerStratum => {
                if decl.totals.len() != decl.variances.len() {
                    return Err(Error::Config("totals and variances cover different strata".into()));
                }
                let mut margins = BTreeMap::new();
                for (key, &total) in &decl.totals {
                    let s: Stratum = key
                        .parse()
                        .map_err(|_| Error::Config(format!("stratum key {key:?} is not an integer")))?;
                    let variance = *decl
                        .variances
                        .get(key)
                        .ok_or_else(|| Error::Config(format!("no variance for stratum {key}")))?;
                    margins.insert(s, StratumMargin { total, variance });
                }
                AuxiliaryMargin::per_stratum(margins)
            }
        }
    }
}

impl From<&AuxiliaryMargin> for MarginDeclaration {
    fn from(m: &AuxiliaryMargin) -> Self {
        match m {
            AuxiliaryMargin::Overall { total, variance } => Self {
                scope: MarginScope::Overall,
                totals: BTreeMap::from([("overall".to_string(), *total)]),
                variances: BTreeMap::from([("overall".to_string(), *variance)]),
            },
            AuxiliaryMargin::PerStratum(ms) => Self {
                scope: MarginScope::PerStratum,
                totals: ms.iter().map(|(s, m)| (s.to_string(), m.total)).collect(),
                variances: ms.iter().map(|(s, m)| (s.to_string(), m.variance)).collect(),
            },
        }
    }
}
