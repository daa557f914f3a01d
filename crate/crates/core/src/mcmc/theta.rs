use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Draws category probabilities from Dirichlet(prior + counts) by normalizing
/// independent Gamma(α_k, 1) variates.
pub fn update_theta<R: Rng + ?Sized>(y_counts: [u64; 3], prior: [f64; 3], rng: &mut R) -> Result<[f64; 3]> {
    let mut g = [0.0; 3];
    for k in 0..3 {
        let shape = prior[k] + y_counts[k] as f64;
        let dist = Gamma::new(shape, 1.0)
            .map_err(|_| Error::ParameterDomain(format!("Dirichlet parameter {shape} must be positive")))?;
        g[k] = dist.sample(rng);
    }
    let total: f64 = g.iter().sum();
    Ok(g.map(|v| v / total))
}
