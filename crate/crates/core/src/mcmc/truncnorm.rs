//! Unit-variance normal draws restricted to an interval.
//!
//! Intervals that reach the central region are sampled by inverting the CDF,
//! working from whichever tail keeps the probabilities away from 1. Intervals
//! lying entirely beyond [`TAIL_START`] standard deviations use rejection from
//! a shifted (and, for finite intervals, truncated) exponential proposal,
//! whose acceptance probability is `exp(−(z − λ)²/2)`.

use rand::distr::{Distribution, Open01};
use rand::Rng;

use crate::error::{Error, Result};
use crate::normal;

/// Distance from the mean beyond which the tail sampler takes over.
pub const TAIL_START: f64 = 3.0;

#[derive(Debug, Clone, Copy)]
enum Region {
    /// Inverse CDF on lower-tail probabilities `[p_lo, p_lo + width]`.
    Lower { p_lo: f64, width: f64, a: f64, b: f64 },
    /// Inverse CDF on upper-tail probabilities `[q_hi, q_hi + width]`.
    Upper { q_hi: f64, width: f64, a: f64, b: f64 },
    /// Exponential rejection on `(a, b)` with `a ≥ TAIL_START`; `sign` maps back.
    Tail { a: f64, span: f64, rate: f64, span_mass: f64, sign: f64 },
}

/// A prepared N(mean, 1) distribution truncated to `(lower, upper)`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    mean: f64,
    region: Region,
}

impl TruncatedNormal {
    pub fn new(mean: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) || mean.is_nan() {
            return Err(Error::EmptyInterval { lower, upper });
        }
        let a = lower - mean;
        let b = upper - mean;
        let region = if a >= TAIL_START {
            tail_region(a, b, 1.0)
        } else if b <= -TAIL_START {
            tail_region(-b, -a, -1.0)
        } else if a > 0.0 {
            let q_hi = normal::sf(b);
            Region::Upper {
                q_hi,
                width: normal::sf(a) - q_hi,
                a,
                b,
            }
        } else {
            let p_lo = normal::cdf(a);
            Region::Lower {
                p_lo,
                width: normal::cdf(b) - p_lo,
                a,
                b,
            }
        };
        Ok(Self { mean, region })
    }

    pub fn mean_parameter(&self) -> f64 {
        self.mean
    }
}

fn tail_region(a: f64, b: f64, sign: f64) -> Region {
    let span = b - a;
    let optimal = 0.5 * (a + (a * a + 4.0).sqrt());
    // Any rate gives a valid bound; the optimal one only if it lies inside.
    let rate = if optimal <= b { optimal } else { a };
    let span_mass = if span.is_finite() {
        -(-rate * span).exp_m1()
    } else {
        1.0
    };
    Region::Tail {
        a,
        span,
        rate,
        span_mass,
        sign,
    }
}

impl Distribution<f64> for TruncatedNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = match self.region {
            Region::Lower { p_lo, width, a, b } => {
                let u: f64 = rng.sample(Open01);
                normal::quantile_unrefined(p_lo + u * width).clamp(a, b)
            }
            Region::Upper { q_hi, width, a, b } => {
                let u: f64 = rng.sample(Open01);
                normal::upper_quantile_unrefined(q_hi + u * width).clamp(a, b)
            }
            Region::Tail {
                a,
                span,
                rate,
                span_mass,
                sign,
            } => loop {
                let u: f64 = rng.sample(Open01);
                let excess = -(-u * span_mass).ln_1p() / rate;
                if excess >= span {
                    continue;
                }
                let z = a + excess;
                let accept: f64 = rng.sample(Open01);
                let d = z - rate;
                if accept <= (-0.5 * d * d).exp() {
                    break sign * z;
                }
            },
        };
        self.mean + z
    }
}

/// One draw from N(mean, 1) restricted to `(lower, upper)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    Ok(TruncatedNormal::new(mean, lower, upper)?.sample(rng))
}
