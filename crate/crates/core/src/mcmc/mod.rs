//! Metropolis-within-Gibbs multiple imputation of a binary covariate.
//!
//! Each iteration replaces the missing `x` values by a proposal drawn from
//! their model-based full conditional, accepts or rejects it against the
//! auxiliary margin (constraint methods only), then updates the category
//! probabilities of `y` and both probit models by data augmentation.

mod chain;
mod imputation;
mod probit;
mod theta;
mod truncnorm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chain::{
    run_chain, write_trace_csv, AcceptanceTrace, ChainOutput, ChainState, ParameterDraw,
    LOW_ACCEPTANCE, WARNING_WINDOW,
};
pub use imputation::{
    constraint_acceptance_ratio, impute_missing_x, imputation_probability,
    metropolis_imputation_step, ImputationTarget,
};
pub use probit::{
    check_full_rank, draw_coefficients_given_latents, draw_given_sufficient,
    update_probit_coefficients, BinaryPatterns,
};
pub use theta::update_theta;
pub use truncnorm::{sample_truncated_normal, TruncatedNormal, TAIL_START};

use crate::error::{Error, Result};
use crate::models::ProbitTerms;
use crate::survey::SurveySample;

/// The four imputation methods compared in the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    MarWeight,
    AnWeight,
    AnConstraint,
    AnConstraintWeight,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::MarWeight,
        Method::AnWeight,
        Method::AnConstraint,
        Method::AnConstraintWeight,
    ];

    /// Display label, e.g. `AN+Constraint`.
    pub fn label(self) -> &'static str {
        match self {
            Method::MarWeight => "MAR+Weight",
            Method::AnWeight => "AN+Weight",
            Method::AnConstraint => "AN+Constraint",
            Method::AnConstraintWeight => "AN+Constraint+Weight",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Method::MarWeight => "MAR_WEIGHT",
            Method::AnWeight => "AN_WEIGHT",
            Method::AnConstraint => "AN_CONSTRAINT",
            Method::AnConstraintWeight => "AN_CONSTRAINT_WEIGHT",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Method::MarWeight => "missing at random; stratum indicator in the outcome model",
            Method::AnWeight => "additive nonignorable; stratum indicator in the outcome model, no margin",
            Method::AnConstraint => "additive nonignorable; imputations constrained to the known margin",
            Method::AnConstraintWeight => {
                "additive nonignorable; margin constraint and stratum indicator in the outcome model"
            }
        }
    }

    /// Whether the response model carries an `x` effect.
    pub fn is_nonignorable(self) -> bool {
        self != Method::MarWeight
    }

    pub fn uses_constraint(self) -> bool {
        matches!(self, Method::AnConstraint | Method::AnConstraintWeight)
    }

    /// Whether the outcome model carries stratum indicators.
    pub fn outcome_has_strata(self) -> bool {
        self != Method::AnConstraint
    }

    pub fn outcome_terms(self, sample: &SurveySample) -> ProbitTerms {
        if self.outcome_has_strata() {
            ProbitTerms::base().with_strata(sample.strata())
        } else {
            ProbitTerms::base()
        }
    }

    pub fn response_terms(self) -> ProbitTerms {
        if self.is_nonignorable() {
            ProbitTerms::base().with_x()
        } else {
            ProbitTerms::base()
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts the code (`AN_CONSTRAINT`), the label (`AN+Constraint`), or a
    /// kebab-case form (`an-constraint`), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .map(|c| if matches!(c, '+' | '-' | ' ') { '_' } else { c.to_ascii_uppercase() })
            .collect();
        Method::ALL
            .into_iter()
            .find(|m| m.code() == key)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// MCMC schedule and method for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub method: Method,
    pub seed: u64,
    /// Replace the margin variance by the average design-variance estimate
    /// over completed datasets taken every `thin` iterations during burn-in.
    #[serde(default)]
    pub refresh_margin_variance: bool,
}

impl ChainSettings {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 100,
            method,
            seed,
            refresh_margin_variance: false,
        }
    }

    pub fn with_schedule(mut self, iterations: usize, burn_in: usize, thin: usize) -> Self {
        self.iterations = iterations;
        self.burn_in = burn_in;
        self.thin = thin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Settings("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Settings(format!(
                "burn-in {} must be less than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.retained() == 0 {
            return Err(Error::Settings(format!(
                "{} post-burn-in iterations thinned by {} retain no datasets",
                self.iterations - self.burn_in,
                self.thin
            )));
        }
        Ok(())
    }

    /// Number of completed datasets L.
    pub fn retained(&self) -> usize {
        if self.thin == 0 || self.burn_in >= self.iterations {
            return 0;
        }
        (self.iterations - self.burn_in) / self.thin
    }

    /// Whether iteration `t` (1-based) contributes a completed dataset.
    pub fn is_retained(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.thin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_retains_fifty() {
        let s = ChainSettings::new(Method::AnConstraint, 1);
        s.validate().unwrap();
        assert_eq!(s.retained(), 50);
        let kept: Vec<usize> = (1..=s.iterations).filter(|&t| s.is_retained(t)).collect();
        assert_eq!(kept.len(), 50);
        assert_eq!(kept[0], 5100);
        assert_eq!(*kept.last().unwrap(), 10_000);
    }

    #[test]
    fn invalid_schedules() {
        let base = ChainSettings::new(Method::MarWeight, 0);
        assert!(base.clone().with_schedule(100, 100, 1).validate().is_err());
        assert!(base.clone().with_schedule(100, 50, 0).validate().is_err());
        assert!(base.clone().with_schedule(100, 50, 60).validate().is_err());
        assert!(base.with_schedule(100, 50, 50).validate().is_ok());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.code().parse::<Method>().unwrap(), m);
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
            assert_eq!(m.code().to_lowercase().replace('_', "-").parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.code()));
        }
        assert!("MNAR".parse::<Method>().is_err());
    }

    #[test]
    fn method_structure() {
        assert!(!Method::MarWeight.is_nonignorable());
        assert!(!Method::MarWeight.response_terms().x);
        assert!(Method::AnWeight.response_terms().x);
        assert!(!Method::AnConstraint.outcome_has_strata());
        assert!(Method::AnConstraintWeight.uses_constraint());
        assert!(!Method::AnWeight.uses_constraint());
    }
}
