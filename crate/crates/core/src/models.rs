//! Probit model evaluation and the identification algebra of the additive
//! nonignorable (AN) model.
//!
//! Every probit model in the crate has the linear predictor
//!
//! ```text
//! intercept + β₂·1[y=2] + β₃·1[y=3] (+ βₓ·x) (+ Σ_s β_s·1[stratum=s])
//! ```
//!
//! with `y = 1` and the smallest stratum label as reference levels. The
//! outcome model for `x` carries stratum effects under the "+Weight" methods;
//! the response model for the missingness indicator carries an `x` effect
//! under AN methods.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::survey::Stratum;

/// Coefficients of a probit model on the indicator design above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitCoefficients {
    pub intercept: f64,
    /// Effects of `y = 2` and `y = 3`.
    pub y_effects: [f64; 2],
    pub x_effect: Option<f64>,
    /// Effects of non-reference strata. Strata absent from the map are at the
    /// reference level.
    pub stratum_effects: Option<BTreeMap<Stratum, f64>>,
}

impl ProbitCoefficients {
    pub fn new(intercept: f64, y2: f64, y3: f64) -> Self {
        Self {
            intercept,
            y_effects: [y2, y3],
            x_effect: None,
            stratum_effects: None,
        }
    }

    pub fn with_x(mut self, effect: f64) -> Self {
        self.x_effect = Some(effect);
        self
    }

    pub fn with_strata(mut self, effects: BTreeMap<Stratum, f64>) -> Self {
        self.stratum_effects = Some(effects);
        self
    }

    pub fn linear_predictor(&self, y: u8, x: Option<u8>, stratum: Option<Stratum>) -> Result<f64> {
        crate::survey::check_y(y)?;
        let mut eta = self.intercept;
        if y >= 2 {
            eta += self.y_effects[usize::from(y - 2)];
        }
        match (self.x_effect, x) {
            (Some(b), Some(x)) => {
                crate::survey::check_x(x)?;
                eta += b * f64::from(x);
            }
            (None, None) => {}
            (Some(_), None) => return Err(Error::Arity("model has an x effect but no x given".into())),
            (None, Some(_)) => return Err(Error::Arity("x given to a model without an x effect".into())),
        }
        match (&self.stratum_effects, stratum) {
            (Some(effects), Some(s)) => eta += effects.get(&s).copied().unwrap_or(0.0),
            (None, None) => {}
            (Some(_), None) => {
                return Err(Error::Arity("model has stratum effects but no stratum given".into()))
            }
            (None, Some(_)) => {
                return Err(Error::Arity("stratum given to a model without stratum effects".into()))
            }
        }
        Ok(eta)
    }
}

/// Φ of the linear predictor.
pub fn probit_prob(
    coef: &ProbitCoefficients,
    y: u8,
    x: Option<u8>,
    stratum: Option<Stratum>,
) -> Result<f64> {
    Ok(normal::cdf(coef.linear_predictor(y, x, stratum)?))
}

/// Column layout of a probit design: which optional terms are present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbitTerms {
    pub x: bool,
    /// Non-reference strata, each contributing one indicator column.
    pub strata: Vec<Stratum>,
}

impl ProbitTerms {
    pub fn base() -> Self {
        Self {
            x: false,
            strata: Vec::new(),
        }
    }

    pub fn with_x(mut self) -> Self {
        self.x = true;
        self
    }

    /// Adds indicators for every stratum but the smallest.
    pub fn with_strata<I: IntoIterator<Item = Stratum>>(mut self, strata: I) -> Self {
        let mut all: Vec<Stratum> = strata.into_iter().collect();
        all.sort_unstable();
        all.dedup();
        self.strata = all.into_iter().skip(1).collect();
        self
    }

    pub fn len(&self) -> usize {
        3 + usize::from(self.x) + self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string(), "y2".to_string(), "y3".to_string()];
        if self.x {
            names.push("x".to_string());
        }
        names.extend(self.strata.iter().map(|s| format!("stratum{s}")));
        names
    }

    /// Writes the design row for one unit into `row` (length [`Self::len`]).
    pub fn fill_row(&self, y: u8, x: u8, stratum: Stratum, row: &mut [f64]) {
        row.fill(0.0);
        row[0] = 1.0;
        if y >= 2 {
            row[usize::from(y - 1)] = 1.0;
        }
        let mut col = 3;
        if self.x {
            row[col] = f64::from(x);
            col += 1;
        }
        if let Some(pos) = self.strata.iter().position(|&s| s == stratum) {
            row[col + pos] = 1.0;
        }
    }

    pub fn row(&self, y: u8, x: u8, stratum: Stratum) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        self.fill_row(y, x, stratum, &mut row);
        row
    }

    /// Packs a coefficient vector in this layout into named coefficients.
    pub fn coefficients(&self, beta: &[f64]) -> ProbitCoefficients {
        debug_assert_eq!(beta.len(), self.len());
        let mut coef = ProbitCoefficients::new(beta[0], beta[1], beta[2]);
        let mut col = 3;
        if self.x {
            coef.x_effect = Some(beta[col]);
            col += 1;
        }
        if !self.strata.is_empty() {
            coef.stratum_effects = Some(
                self.strata
                    .iter()
                    .zip(&beta[col..])
                    .map(|(&s, &b)| (s, b))
                    .collect(),
            );
        }
        coef
    }
}

/// Pattern-mixture parameterization of the binary (X, Y, R) table.
///
/// `theta[y][r] = Pr(X=1 | Y=y, R=r)`, `pi[r] = Pr(Y=1 | R=r)`, `q = Pr(R=1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternMixtureTable {
    pub theta: [[f64; 2]; 2],
    pub pi: [f64; 2],
    pub q: f64,
}

impl PatternMixtureTable {
    pub fn new(theta: [[f64; 2]; 2], pi: [f64; 2], q: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if theta.iter().flatten().chain(&pi).chain([&q]).all(|&v| in_unit(v)) {
            Ok(Self { theta, pi, q })
        } else {
            Err(Error::ParameterDomain("pattern-mixture entries must lie in [0, 1]".into()))
        }
    }
}

/// Residual of the linear constraint that a known margin `Pr(X=1)` places on
/// the nonrespondent cell probabilities θ₀₁ and θ₁₁. Zero for a table that is
/// consistent with the margin.
pub fn margin_linear_constraint(
    margin_prob: f64,
    table: &PatternMixtureTable,
    observed_joint: f64,
) -> f64 {
    let nonrespondent_x =
        table.theta[0][1] * (1.0 - table.pi[1]) + table.theta[1][1] * table.pi[1];
    (margin_prob - observed_joint) - table.q * nonrespondent_x
}

/// The common nonrespondent probability θ* = θ₀₁ = θ₁₁ implied by the margin
/// when `x` and `y` are independent among nonrespondents.
pub fn conditional_independence_theta(
    margin_prob: f64,
    q: f64,
    theta00: f64,
    theta10: f64,
    pi0: f64,
) -> Result<f64> {
    if q == 0.0 {
        return Err(Error::DivisionDomain);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::ParameterDomain(format!("q = {q} is not a probability")));
    }
    let respondent = theta00 * (1.0 - pi0) + theta10 * pi0;
    let theta = (margin_prob - (1.0 - q) * respondent) / q;
    const SLACK: f64 = 1e-12;
    if !(-SLACK..=1.0 + SLACK).contains(&theta) || !theta.is_finite() {
        return Err(Error::InfeasibleMargin(theta));
    }
    Ok(theta.clamp(0.0, 1.0))
}
