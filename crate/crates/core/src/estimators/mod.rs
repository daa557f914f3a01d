//! Completed-data analysis and multiple-imputation combining rules.

mod probit;

use serde::{Deserialize, Serialize};

pub use probit::{
    linearization_covariance, solve_probit, unweighted_probit_fit, weighted_probit_fit, FitResult,
    NewtonSolution, ProbitData, MAX_HALVINGS, MAX_ITERATIONS, SCORE_TOLERANCE, SEPARATION_ETA,
    SEPARATION_NORM,
};

use crate::error::{Error, Result};
use crate::survey::{ht_total, ht_variance_by_stratum, SurveySample};

/// Design-variance convention for stratified samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceConvention {
    /// Without-replacement variance including the factor `1 − n_s/N_s`.
    #[default]
    WithoutReplacement,
    /// With-replacement approximation: no finite population correction.
    WithReplacement,
}

impl VarianceConvention {
    fn fpc(self) -> bool {
        self == VarianceConvention::WithoutReplacement
    }
}

/// Horvitz–Thompson total of `x` and its design standard error.
pub fn ht_with_se(dataset: &SurveySample, convention: VarianceConvention) -> Result<(f64, f64)> {
    let total = ht_total(dataset)?;
    let var: f64 = ht_variance_by_stratum(dataset, convention.fpc())?.values().sum();
    Ok((total, var.sqrt()))
}

/// Rubin's combined estimate from L completed-data analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    /// q̄_L
    pub point: f64,
    /// T_L = (1 + 1/L)·b_L + ū_L
    pub variance: f64,
    /// ū_L
    pub within: f64,
    /// b_L
    pub between: f64,
    #[serde(rename = "L")]
    pub l: usize,
}

impl MIEstimate {
    pub fn se(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Combines point estimates `q` and their variances `u` over L ≥ 2 imputations.
/// Zero variances are allowed, e.g. for a census stratum.
pub fn rubin_combine(q: &[f64], u: &[f64]) -> Result<MIEstimate> {
    let l = q.len();
    if u.len() != l {
        return Err(Error::Arity(format!("{l} estimates with {} variances", u.len())));
    }
    if l < 2 {
        return Err(Error::DegenerateCombination(l));
    }
    if q.iter().any(|v| !v.is_finite()) || u.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::ParameterDomain(
            "estimates must be finite and variances nonnegative".into(),
        ));
    }
    let lf = l as f64;
    // Offsetting by q₀ makes identical estimates combine with b_L = 0 exactly.
    let point = q[0] + q.iter().map(|v| v - q[0]).sum::<f64>() / lf;
    let between = q.iter().map(|v| (v - point) * (v - point)).sum::<f64>() / (lf - 1.0);
    let within = u.iter().sum::<f64>() / lf;
    Ok(MIEstimate {
        point,
        variance: (1.0 + 1.0 / lf) * between + within,
        within,
        between,
        l,
    })
}

/// Averages run-level MI estimates: `(Σ q̄ / M, √(Σ T / M))`.
pub fn aggregate_runs(estimates: &[MIEstimate]) -> Result<(f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::ParameterDomain("no runs to aggregate".into()));
    }
    let m = estimates.len() as f64;
    let point = estimates.iter().map(|e| e.point).sum::<f64>() / m;
    let var = estimates.iter().map(|e| e.variance).sum::<f64>() / m;
    Ok((point, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rubin_two_point() {
        let e = rubin_combine(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!((e.point, e.between, e.within, e.variance, e.l), (2.0, 2.0, 1.0, 4.0, 2));
        let e = rubin_combine(&[5.0; 4], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(e.between, 0.0);
        assert_eq!(e.variance, e.within);
    }

    #[test]
    fn rubin_rejects_degenerate_input() {
        assert!(matches!(rubin_combine(&[1.0], &[1.0]), Err(Error::DegenerateCombination(1))));
        assert!(rubin_combine(&[1.0, 2.0], &[1.0]).is_err());
        assert!(rubin_combine(&[1.0, 2.0], &[1.0, -1.0]).is_err());
        assert!(rubin_combine(&[1.0, f64::NAN], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let e = rubin_combine(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(aggregate_runs(&[e]).unwrap(), (2.0, 2.0));
        assert_eq!(aggregate_runs(&[e, e, e]).unwrap(), (2.0, 2.0));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn mi_estimate_json_fields() {
        let e = rubin_combine(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        let v = serde_json::to_value(e).unwrap();
        for k in ["point", "variance", "within", "between", "L"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
