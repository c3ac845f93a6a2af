//! Side-by-side score-function and reparameterization gradients on a 1-D
//! Gaussian target, where both have a closed-form expectation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{reparam_gradient, score_gradient};
use crate::model::GaussianTarget;
use crate::stats::{positive, sigmoid, HALF_LN_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReparamReport {
    pub lambda: Vec<f64>,
    pub samples: usize,
    /// Closed-form `∇_λ ELBO` for `λ = (μ, ρ)`, `σ = softplus(ρ)`.
    pub exact: Vec<f64>,
    pub score_mean: Vec<f64>,
    pub score_se: Vec<f64>,
    pub score_variance: Vec<f64>,
    pub reparam_mean: Vec<f64>,
    pub reparam_se: Vec<f64>,
    pub reparam_variance: Vec<f64>,
    /// Per-coordinate `score_var / reparam_var`.
    pub variance_ratio: Vec<f64>,
    /// Per-coordinate `|score − reparam| / combined SE`.
    pub agreement_z: Vec<f64>,
    /// `|[q(z)(log p(z) − log q(z))]|` between `μ ± 10σ`: the integration by
    /// parts boundary term relating the two estimators.
    pub boundary_term: f64,
    pub passed: bool,
}

/// Exact `∇_{μ,ρ}` of `E_q[log N(z; m, s²)] + H[q]` for `q = N(μ, softplus(ρ)²)`.
pub fn exact_gaussian_gradient(target: &GaussianTarget, lambda: &[f64]) -> Vec<f64> {
    let (m, s2) = (target.mean(), target.sd() * target.sd());
    let sigma = positive(lambda[1]);
    vec![(m - lambda[0]) / s2, (1.0 / sigma - sigma / s2) * sigmoid(lambda[1])]
}

pub fn score_reparam_report<R: Rng + ?Sized>(
    target: &GaussianTarget,
    lambda: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<ScoreReparamReport> {
    if lambda.len() != 2 {
        return Err(invalid("a 1-D Gaussian factor has parameters (μ, ρ)"));
    }
    let score = score_gradient(target, lambda, rng, n)?;
    let rep = reparam_gradient(target, lambda, rng, n)?;
    let var = |se: &[f64]| se.iter().map(|s| s * s * n as f64).collect::<Vec<f64>>();
    let (sv, rv) = (var(&score.std_error), var(&rep.std_error));
    let variance_ratio = sv.iter().zip(&rv).map(|(a, b)| a / b).collect::<Vec<_>>();
    let agreement_z = (0..2)
        .map(|j| {
            let se = (score.std_error[j].powi(2) + rep.std_error[j].powi(2)).sqrt();
            let diff = (score.mean[j] - rep.mean[j]).abs();
            if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY }
        })
        .collect::<Vec<_>>();

    let sigma = positive(lambda[1]);
    let edge = |z: f64| {
        let rq = (z - lambda[0]) / sigma;
        let log_q = -0.5 * rq * rq - sigma.ln() - HALF_LN_2PI;
        let rp = (z - target.mean()) / target.sd();
        let log_p = -0.5 * rp * rp - target.sd().ln() - HALF_LN_2PI;
        log_q.exp() * (log_p - log_q)
    };
    let boundary_term = (edge(lambda[0] + 10.0 * sigma) - edge(lambda[0] - 10.0 * sigma)).abs();
    let passed = agreement_z.iter().all(|z| *z < 3.0);
    Ok(ScoreReparamReport {
        lambda: lambda.to_vec(),
        samples: n,
        exact: exact_gaussian_gradient(target, lambda),
        score_mean: score.mean,
        score_se: score.std_error,
        score_variance: sv,
        reparam_mean: rep.mean,
        reparam_se: rep.std_error,
        reparam_variance: rv,
        variance_ratio,
        agreement_z,
        boundary_term,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::stats::softplus_inv;

    #[test]
    fn unit_gaussian_report() {
        let target = GaussianTarget::new(1.0, 1.0).unwrap();
        let lambda = [0.0, softplus_inv(1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = score_reparam_report(&target, &lambda, &mut rng, 20_000).unwrap();
        assert!(r.passed);
        assert!((r.exact[0] - 1.0).abs() < 1e-15 && r.exact[1].abs() < 1e-15);
        for mean_se in [(r.score_mean[0], r.score_se[0]), (r.reparam_mean[0], r.reparam_se[0])] {
            assert!((mean_se.0 - 1.0).abs() < 3.0 * mean_se.1);
        }
        assert!(r.variance_ratio.iter().all(|v| *v > 1.0));
        assert!(r.boundary_term < 1e-15);
    }

    #[test]
    fn target_equal_to_q_gives_zero_gradients() {
        let target = GaussianTarget::new(0.5, 2.0).unwrap();
        let lambda = [0.5, softplus_inv(2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = score_reparam_report(&target, &lambda, &mut rng, 5_000).unwrap();
        for j in 0..2 {
            assert!(r.score_mean[j].abs() <= 3.0 * r.score_se[j] + 1e-12);
            assert!(r.reparam_mean[j].abs() <= 3.0 * r.reparam_se[j] + 1e-12);
        }
    }
}
