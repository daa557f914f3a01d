//! Finite populations, stratified samples, and design-based totals.

mod csv_io;
mod generate;
mod margin;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{read_sample_csv, write_population_csv, write_sample_csv};
pub use generate::{draw_stratified_sample, generate_population, impose_missingness, SealedTruth};
pub use margin::{
    margin_from_population, theoretical_margin_variance, AuxiliaryMargin, MarginDeclaration,
    MarginScope, MarginVariance, StratumMargin,
};

/// Stratum label. Stratum ordering (and the reference stratum, the smallest
/// label) follows the natural order of labels.
pub type Stratum = u32;

/// Number of levels of the fully observed categorical variable `y`.
pub const Y_LEVELS: usize = 3;

pub(crate) fn check_y(y: u8) -> Result<()> {
    if (1..=3).contains(&y) {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("y = {y} is not in {{1, 2, 3}}")))
    }
}

pub(crate) fn check_x(x: u8) -> Result<()> {
    if x <= 1 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("x = {x} is not binary")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationUnit {
    pub stratum: Stratum,
    pub y: u8,
    pub x: u8,
}

/// A finite population with stratum labels, a three-level `y`, and a binary `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedPopulation {
    units: Vec<PopulationUnit>,
    stratum_sizes: BTreeMap<Stratum, usize>,
}

impl StratifiedPopulation {
    pub fn new(units: Vec<PopulationUnit>) -> Result<Self> {
        let mut stratum_sizes = BTreeMap::new();
        for unit in &units {
            check_y(unit.y)?;
            check_x(unit.x)?;
            *stratum_sizes.entry(unit.stratum).or_insert(0) += 1;
        }
        Ok(Self {
            units,
            stratum_sizes,
        })
    }

    pub fn units(&self) -> &[PopulationUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn stratum_sizes(&self) -> &BTreeMap<Stratum, usize> {
        &self.stratum_sizes
    }

    /// Per-stratum totals of `x`.
    pub fn stratum_totals(&self) -> BTreeMap<Stratum, f64> {
        let mut totals: BTreeMap<Stratum, f64> =
            self.stratum_sizes.keys().map(|&s| (s, 0.0)).collect();
        for unit in &self.units {
            *totals.get_mut(&unit.stratum).expect("stratum indexed") += f64::from(unit.x);
        }
        totals
    }
}

/// Population total of `x`.
pub fn population_total(pop: &StratifiedPopulation) -> f64 {
    pop.units.iter().map(|u| f64::from(u.x)).sum()
}

/// Population size and sample size of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumDesign {
    /// N_s. Real-valued so that user files whose weights were rounded still work.
    pub population_size: f64,
    /// n_s.
    pub draws: usize,
}

impl StratumDesign {
    pub fn weight(&self) -> f64 {
        self.population_size / self.draws as f64
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.draws as f64 / self.population_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleUnit {
    pub stratum: Stratum,
    pub weight: f64,
    pub y: u8,
    /// `None` when the item is missing.
    pub x: Option<u8>,
}

impl SampleUnit {
    /// Missingness indicator: 1 when `x` is absent.
    pub fn r(&self) -> u8 {
        u8::from(self.x.is_none())
    }
}

/// A stratified simple random sample with base weights `N_s / n_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySample {
    units: Vec<SampleUnit>,
    design: BTreeMap<Stratum, StratumDesign>,
}

impl SurveySample {
    /// Builds a sample, checking that every unit's weight matches its stratum design.
    pub fn new(units: Vec<SampleUnit>, design: BTreeMap<Stratum, StratumDesign>) -> Result<Self> {
        let mut counts: BTreeMap<Stratum, usize> = BTreeMap::new();
        for unit in &units {
            check_y(unit.y)?;
            if let Some(x) = unit.x {
                check_x(x)?;
            }
            let d = design.get(&unit.stratum).ok_or_else(|| {
                Error::Design(format!("unit in undeclared stratum {}", unit.stratum))
            })?;
            if !(unit.weight > 0.0) || (unit.weight - d.weight()).abs() > 1e-9 * d.weight() {
                return Err(Error::Design(format!(
                    "weight {} does not equal N_s/n_s = {} in stratum {}",
                    unit.weight,
                    d.weight(),
                    unit.stratum
                )));
            }
            *counts.entry(unit.stratum).or_insert(0) += 1;
        }
        for (s, d) in &design {
            if counts.get(s).copied().unwrap_or(0) != d.draws {
                return Err(Error::Design(format!(
                    "stratum {s} declares n_s = {} but holds {} unit(s)",
                    d.draws,
                    counts.get(s).copied().unwrap_or(0)
                )));
            }
            if d.population_size < d.draws as f64 {
                return Err(Error::Design(format!("stratum {s} has n_s > N_s")));
            }
        }
        Ok(Self { units, design })
    }

    pub fn units(&self) -> &[SampleUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn design(&self) -> &BTreeMap<Stratum, StratumDesign> {
        &self.design
    }

    pub fn strata(&self) -> impl Iterator<Item = Stratum> + '_ {
        self.design.keys().copied()
    }

    pub fn stratum_draws(&self) -> BTreeMap<Stratum, usize> {
        self.design.iter().map(|(&s, d)| (s, d.draws)).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.units.iter().filter(|u| u.x.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.units.iter().all(|u| u.x.is_some())
    }

    /// Indices of units with missing `x`, in unit order.
    pub fn missing_indices(&self) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.x.is_none().then_some(i))
            .collect()
    }

    /// Fills the missing slots, in unit order, with `imputations`.
    pub fn completed_with(&self, imputations: &[u8]) -> Result<SurveySample> {
        let missing = self.missing_count();
        if imputations.len() != missing {
            return Err(Error::Arity(format!(
                "{} imputation(s) for {missing} missing slot(s)",
                imputations.len()
            )));
        }
        let mut fill = imputations.iter();
        let units = self
            .units
            .iter()
            .map(|u| {
                let x = u.x.or_else(|| fill.next().copied());
                SampleUnit { x, ..*u }
            })
            .collect();
        Ok(SurveySample {
            units,
            design: self.design.clone(),
        })
    }

    pub(crate) fn from_parts_unchecked(
        units: Vec<SampleUnit>,
        design: BTreeMap<Stratum, StratumDesign>,
    ) -> Self {
        Self { units, design }
    }
}

/// Horvitz–Thompson total Σ wᵢxᵢ of a completed sample.
pub fn ht_total(sample: &SurveySample) -> Result<f64> {
    let missing = sample.missing_count();
    if missing > 0 {
        return Err(Error::Incomplete { missing });
    }
    Ok(sample
        .units
        .iter()
        .map(|u| u.weight * f64::from(u.x.unwrap_or(0)))
        .sum())
}

/// Per-stratum Horvitz–Thompson totals of a completed sample.
pub fn ht_totals_by_stratum(sample: &SurveySample) -> Result<BTreeMap<Stratum, f64>> {
    let missing = sample.missing_count();
    if missing > 0 {
        return Err(Error::Incomplete { missing });
    }
    let mut totals: BTreeMap<Stratum, f64> = sample.strata().map(|s| (s, 0.0)).collect();
    for u in &sample.units {
        *totals.get_mut(&u.stratum).expect("declared stratum") +=
            u.weight * f64::from(u.x.unwrap_or(0));
    }
    Ok(totals)
}

/// Design variance of each stratum's Horvitz–Thompson total under stratified
/// SRS: `N_s² (1 − n_s/N_s) s_s² / n_s`, with `s_s²` the within-stratum sample
/// variance of `x`. With `finite_population_correction = false` the factor
/// `1 − n_s/N_s` is dropped (with-replacement approximation).
pub fn ht_variance_by_stratum(
    sample: &SurveySample,
    finite_population_correction: bool,
) -> Result<BTreeMap<Stratum, f64>> {
    let missing = sample.missing_count();
    if missing > 0 {
        return Err(Error::Incomplete { missing });
    }
    let mut sums: BTreeMap<Stratum, (f64, f64)> = sample.strata().map(|s| (s, (0.0, 0.0))).collect();
    for u in &sample.units {
        let x = f64::from(u.x.unwrap_or(0));
        let e = sums.get_mut(&u.stratum).expect("declared stratum");
        e.0 += x;
        e.1 += x * x;
    }
    sums.into_iter()
        .map(|(s, (sx, sxx))| {
            let d = sample.design[&s];
            if d.draws < 2 {
                return Err(Error::VarianceUndefined { stratum: s, draws: d.draws });
            }
            let n = d.draws as f64;
            let s2 = ((sxx - sx * sx / n) / (n - 1.0)).max(0.0);
            let fpc = if finite_population_correction { 1.0 - d.sampling_fraction() } else { 1.0 };
            Ok((s, d.population_size * d.population_size * fpc * s2 / n))
        })
        .collect()
}
