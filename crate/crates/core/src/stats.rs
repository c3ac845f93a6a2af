//! Exponential-family factors for the variational likelihood.
//!
//! Every factor is parameterized by an unconstrained real vector `λ_i`. A link
//! maps it into the family's valid region: logistic for probabilities,
//! softplus for positive quantities. Gaussian factors use `(mean, stddev)`
//! rather than natural parameters.
//!
//! Latent values are carried as `f64` for every family; discrete supports are
//! checked for integrality.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{domain, invalid, Result};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Smallest positive parameter value produced by a softplus link.
const POSITIVE_FLOOR: f64 = 1e-150;

/// Distribution family of one latent factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bernoulli,
    Poisson,
    Gaussian,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Binary,
    NonNegInteger,
    Real,
    PositiveReal,
}

/// Per-latent-variable description of a mean-field factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorSpec {
    family: Family,
}

impl FactorSpec {
    pub const fn new(family: Family) -> Self {
        Self { family }
    }

    pub const fn bernoulli() -> Self {
        Self::new(Family::Bernoulli)
    }

    pub const fn poisson() -> Self {
        Self::new(Family::Poisson)
    }

    pub const fn gaussian() -> Self {
        Self::new(Family::Gaussian)
    }

    pub const fn gamma() -> Self {
        Self::new(Family::Gamma)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Length of the unconstrained parameter slice.
    pub fn param_dim(&self) -> usize {
        match self.family {
            Family::Bernoulli | Family::Poisson => 1,
            Family::Gaussian | Family::Gamma => 2,
        }
    }

    pub fn support(&self) -> Support {
        match self.family {
            Family::Bernoulli => Support::Binary,
            Family::Poisson => Support::NonNegInteger,
            Family::Gaussian => Support::Real,
            Family::Gamma => Support::PositiveReal,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.support(), Support::Binary | Support::NonNegInteger)
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::Gaussian => "gaussian",
            Family::Gamma => "gamma",
        }
    }

    pub fn check_support(&self, z: f64) -> Result<()> {
        let ok = match self.support() {
            Support::Binary => z == 0.0 || z == 1.0,
            Support::NonNegInteger => z.is_finite() && z >= 0.0 && z.fract() == 0.0,
            Support::Real => z.is_finite(),
            Support::PositiveReal => z.is_finite() && z > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("{z} is outside the {} support", self.name())))
        }
    }

    fn check_params(&self, lambda_i: &[f64]) -> Result<()> {
        if lambda_i.len() != self.param_dim() {
            return Err(invalid(format!(
                "{} factor expects {} parameters, got {}",
                self.name(),
                self.param_dim(),
                lambda_i.len()
            )));
        }
        if let Some(x) = lambda_i.iter().find(|x| !x.is_finite()) {
            return Err(invalid(format!("non-finite factor parameter {x}")));
        }
        Ok(())
    }
}

/// Constrained parameters after applying the family link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkedParams {
    Bernoulli { p: f64 },
    Poisson { rate: f64 },
    Gaussian { mean: f64, stddev: f64 },
    Gamma { shape: f64, rate: f64 },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(softplus(x))`, finite for every finite `x`.
pub fn log_softplus(x: f64) -> f64 {
    if x < -30.0 {
        x
    } else {
        softplus(x).ln()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `sigmoid(x) / softplus(x)`, which tends to 1 as `x → -∞`.
fn sigmoid_over_softplus(x: f64) -> f64 {
    if x < -30.0 {
        1.0
    } else {
        sigmoid(x) / softplus(x)
    }
}

pub(crate) fn positive(x: f64) -> f64 {
    softplus(x).max(POSITIVE_FLOOR)
}

/// `ln k!` with a cached table for small counts.
pub fn ln_factorial(k: f64) -> f64 {
    const TABLE_LEN: usize = 1024;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    if k >= 0.0 && k < TABLE_LEN as f64 && k.fract() == 0.0 {
        let table = TABLE.get_or_init(|| {
            let mut t = Vec::with_capacity(TABLE_LEN);
            let mut acc = 0.0;
            t.push(0.0);
            for i in 1..TABLE_LEN {
                acc += (i as f64).ln();
                t.push(acc);
            }
            t
        });
        table[k as usize]
    } else {
        ln_gamma(k + 1.0)
    }
}

pub fn link(spec: FactorSpec, lambda_i: &[f64]) -> Result<LinkedParams> {
    spec.check_params(lambda_i)?;
    Ok(match spec.family {
        Family::Bernoulli => LinkedParams::Bernoulli {
            p: sigmoid(lambda_i[0]),
        },
        Family::Poisson => LinkedParams::Poisson {
            rate: softplus(lambda_i[0]),
        },
        Family::Gaussian => LinkedParams::Gaussian {
            mean: lambda_i[0],
            stddev: positive(lambda_i[1]),
        },
        Family::Gamma => LinkedParams::Gamma {
            shape: positive(lambda_i[0]),
            rate: positive(lambda_i[1]),
        },
    })
}

/// Log mass or density of `z` under the linked factor.
pub fn log_density(spec: FactorSpec, lambda_i: &[f64], z: f64) -> Result<f64> {
    spec.check_params(lambda_i)?;
    spec.check_support(z)?;
    Ok(log_density_unchecked(spec.family, lambda_i, z))
}

pub(crate) fn log_density_unchecked(family: Family, l: &[f64], z: f64) -> f64 {
    match family {
        Family::Bernoulli => z * l[0] - softplus(l[0]),
        Family::Poisson => z * log_softplus(l[0]) - softplus(l[0]) - ln_factorial(z),
        Family::Gaussian => {
            let sd = positive(l[1]);
            let r = (z - l[0]) / sd;
            -0.5 * r * r - sd.ln() - HALF_LN_2PI
        }
        Family::Gamma => {
            let shape = positive(l[0]);
            let rate = positive(l[1]);
            shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * z.ln() - rate * z
        }
    }
}

/// Writes the score `∇_λ log q(z | λ_i)` into `out` and returns the log density.
pub(crate) fn log_density_and_score_unchecked(
    family: Family,
    l: &[f64],
    z: f64,
    out: &mut [f64],
) -> f64 {
    match family {
        Family::Bernoulli => {
            out[0] = z - sigmoid(l[0]);
            z * l[0] - softplus(l[0])
        }
        Family::Poisson => {
            let s = sigmoid(l[0]);
            out[0] = z * sigmoid_over_softplus(l[0]) - s;
            z * log_softplus(l[0]) - softplus(l[0]) - ln_factorial(z)
        }
        Family::Gaussian => {
            let sd = positive(l[1]);
            let r = (z - l[0]) / sd;
            out[0] = r / sd;
            out[1] = if sd > POSITIVE_FLOOR {
                (r * r - 1.0) / sd * sigmoid(l[1])
            } else {
                0.0
            };
            -0.5 * r * r - sd.ln() - HALF_LN_2PI
        }
        Family::Gamma => {
            let shape = positive(l[0]);
            let rate = positive(l[1]);
            out[0] = if shape > POSITIVE_FLOOR {
                (rate.ln() - digamma(shape) + z.ln()) * sigmoid(l[0])
            } else {
                0.0
            };
            out[1] = if rate > POSITIVE_FLOOR {
                (shape / rate - z) * sigmoid(l[1])
            } else {
                0.0
            };
            shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * z.ln() - rate * z
        }
    }
}

/// Gradient of [`log_density`] with respect to the unconstrained `λ_i`.
pub fn score(spec: FactorSpec, lambda_i: &[f64], z: f64) -> Result<Vec<f64>> {
    spec.check_params(lambda_i)?;
    spec.check_support(z)?;
    let mut out = vec![0.0; spec.param_dim()];
    log_density_and_score_unchecked(spec.family, lambda_i, z, &mut out);
    Ok(out)
}

/// Draws one value from the linked factor.
pub fn sample<R: Rng + ?Sized>(spec: FactorSpec, lambda_i: &[f64], rng: &mut R) -> Result<f64> {
    spec.check_params(lambda_i)?;
    Ok(sample_unchecked(spec.family, lambda_i, rng))
}

pub(crate) fn sample_unchecked<R: Rng + ?Sized>(family: Family, l: &[f64], rng: &mut R) -> f64 {
    match family {
        Family::Bernoulli => {
            if rng.random::<f64>() < sigmoid(l[0]) {
                1.0
            } else {
                0.0
            }
        }
        Family::Poisson => sample_poisson(softplus(l[0]), rng),
        Family::Gaussian => {
            let e: f64 = StandardNormal.sample(rng);
            l[0] + positive(l[1]) * e
        }
        Family::Gamma => {
            let shape = positive(l[0]);
            let rate = positive(l[1]);
            // shape and rate are floored positive, so construction cannot fail
            let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
            g.sample(rng).max(f64::MIN_POSITIVE)
        }
    }
}

/// Poisson draw: sequential inversion below rate 10, PTRS rejection above.
pub fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate < 10.0 {
        let u: f64 = rng.random();
        let mut k = 0.0;
        let mut p = (-rate).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1.0;
            p *= rate / k;
            cdf += p;
            if p == 0.0 && cdf < u {
                // cdf stalled below u from rounding; u sits in the far tail
                break;
            }
        }
        return k;
    }
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -rate + k * loglam - ln_factorial(k) {
            return k;
        }
    }
}

/// `log Σ exp(x_j)` by max-shifting.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(invalid("log_sum_exp of an empty vector"));
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(max);
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Standard normal log density of a vector.
pub fn log_std_normal(x: &[f64]) -> f64 {
    x.iter().map(|v| -0.5 * v * v - HALF_LN_2PI).sum()
}
