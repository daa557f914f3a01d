//! Latent-utility Gibbs update for probit coefficients under a standard
//! multivariate normal prior.
//!
//! Observations sharing a design row are grouped, so one sweep costs one
//! truncated-normal setup per distinct row and response sign plus one draw per
//! observation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use super::truncnorm::TruncatedNormal;
use crate::error::{Error, Result};

/// Below this ratio of smallest to largest eigenvalue of X'X the design is
/// treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Binary-response data compressed to distinct design rows with counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPatterns {
    dim: usize,
    rows: Vec<f64>,
    ones: Vec<u64>,
    zeros: Vec<u64>,
}

impl BinaryPatterns {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            ones: Vec::new(),
            zeros: Vec::new(),
        }
    }

    /// Groups raw observations by identical design rows.
    pub fn from_data(responses: &[u8], design_rows: &[Vec<f64>]) -> Result<Self> {
        if responses.len() != design_rows.len() {
            return Err(Error::Arity(format!(
                "{} responses for {} design rows",
                responses.len(),
                design_rows.len()
            )));
        }
        let dim = design_rows.first().map_or(0, Vec::len);
        let mut out = Self::new(dim);
        let mut index: std::collections::HashMap<Vec<u64>, usize> = Default::default();
        for (&r, row) in responses.iter().zip(design_rows) {
            if row.len() != dim {
                return Err(Error::Arity("design rows differ in length".into()));
            }
            if r > 1 {
                return Err(Error::ParameterDomain(format!("binary response {r}")));
            }
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let k = *index.entry(key).or_insert_with(|| {
                out.push(row, 0, 0);
                out.ones.len() - 1
            });
            if r == 1 {
                out.ones[k] += 1;
            } else {
                out.zeros[k] += 1;
            }
        }
        Ok(out)
    }

    /// Appends a pattern. Rows need not be distinct.
    pub fn push(&mut self, row: &[f64], ones: u64, zeros: u64) {
        assert_eq!(row.len(), self.dim, "pattern row length");
        self.rows.extend_from_slice(row);
        self.ones.push(ones);
        self.zeros.push(zeros);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patterns(&self) -> usize {
        self.ones.len()
    }

    pub fn observations(&self) -> u64 {
        self.ones.iter().sum::<u64>() + self.zeros.iter().sum::<u64>()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn counts(&self, k: usize) -> (u64, u64) {
        (self.ones[k], self.zeros[k])
    }

    /// X'X over all observations.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for k in 0..self.patterns() {
            let n = (self.ones[k] + self.zeros[k]) as f64;
            if n == 0.0 {
                continue;
            }
            let row = self.row(k);
            for i in 0..self.dim {
                for j in 0..=i {
                    g[(i, j)] += n * row[i] * row[j];
                }
            }
        }
        g.fill_upper_triangle_with_lower_triangle();
        g
    }
}

/// Fails with [`Error::SingularDesign`] unless X'X is numerically full rank.
pub fn check_full_rank(gram: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if max > 0.0 && min > RANK_TOLERANCE * max {
        Ok(())
    } else {
        Err(Error::SingularDesign)
    }
}

/// Draws from N((X'X + I)⁻¹X'z, (X'X + I)⁻¹), the coefficient full
/// conditional given latent utilities under the N(0, I) prior.
pub fn draw_given_sufficient<R: Rng + ?Sized>(
    gram: &DMatrix<f64>,
    xtz: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dim = xtz.len();
    let precision = gram + DMatrix::identity(dim, dim);
    let chol = precision.cholesky().ok_or(Error::SingularDesign)?;
    let mean = chol.solve(xtz);
    let eps = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    // If P = LL' then L'⁻¹ε has covariance P⁻¹.
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or(Error::SingularDesign)?;
    Ok(mean + noise)
}

/// Coefficient draw given fixed latent utilities.
pub fn draw_coefficients_given_latents<R: Rng + ?Sized>(
    design_rows: &[Vec<f64>],
    latents: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if design_rows.len() != latents.len() || design_rows.is_empty() {
        return Err(Error::Arity("one latent per design row required".into()));
    }
    let dim = design_rows[0].len();
    let x = DMatrix::from_fn(design_rows.len(), dim, |i, j| design_rows[i][j]);
    let z = DVector::from_column_slice(latents);
    Ok(draw_given_sufficient(&(x.transpose() * &x), &(x.transpose() * z), rng)?
        .iter()
        .copied()
        .collect())
}

/// One data-augmentation sweep: latent utilities given `current`, then
/// coefficients given the latents. With no observations this is a prior draw.
pub fn update_probit_coefficients<R: Rng + ?Sized>(
    data: &BinaryPatterns,
    current: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dim = data.dim();
    if current.len() != dim {
        return Err(Error::Arity(format!(
            "{} coefficients for a {dim}-column design",
            current.len()
        )));
    }
    let gram = data.gram();
    if data.observations() > 0 {
        check_full_rank(&gram)?;
    }
    let mut xtz = DVector::zeros(dim);
    for k in 0..data.patterns() {
        let row = data.row(k);
        let eta: f64 = row.iter().zip(current).map(|(a, b)| a * b).sum();
        let (ones, zeros) = data.counts(k);
        let mut sum = 0.0;
        if ones > 0 {
            let pos = TruncatedNormal::new(eta, 0.0, f64::INFINITY)?;
            sum += (0..ones).map(|_| pos.sample(rng)).sum::<f64>();
        }
        if zeros > 0 {
            let neg = TruncatedNormal::new(eta, f64::NEG_INFINITY, 0.0)?;
            sum += (0..zeros).map(|_| neg.sample(rng)).sum::<f64>();
        }
        for (acc, &v) in xtz.iter_mut().zip(row) {
            *acc += v * sum;
        }
    }
    Ok(draw_given_sufficient(&gram, &xtz, rng)?.iter().copied().collect())
}
