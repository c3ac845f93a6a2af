//! Stochastic ascent on (θ, φ) with a per-iteration trace.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{EstimatorConfig, Hierarchical};
use crate::optim::{Optimizer, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub estimator: EstimatorConfig,
    pub optimizer: OptimizerConfig,
    /// Relative change of the ELBO moving average that counts as converged.
    pub tolerance: f64,
    /// Moving-average window length.
    pub window: usize,
    /// No convergence check before this many iterations.
    pub min_iterations: usize,
    /// Decay of the per-factor signal baseline; `None` disables it.
    pub baseline_decay: Option<f64>,
    pub update_theta: bool,
    pub update_phi: bool,
    /// Record wall-clock milliseconds per iteration. Off by default because
    /// timings make traces non-reproducible.
    pub record_wall_time: bool,
    /// Optional second stage at a smaller step size, started after the first
    /// stage converges or exhausts its iterations.
    pub refine: Option<RefineStage>,
    /// Return an exponential moving average of the iterates of the last
    /// stage, with this decay, instead of the final iterate.
    pub average_decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineStage {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            estimator: EstimatorConfig::default(),
            optimizer: OptimizerConfig::default(),
            tolerance: 1e-4,
            window: 50,
            min_iterations: 100,
            baseline_decay: None,
            update_theta: true,
            update_phi: true,
            record_wall_time: false,
            refine: None,
            average_decay: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.max_iterations == 0 || self.window == 0 || self.estimator.samples < 2 {
            return Err(invalid("iterations, window and samples must be positive (samples ≥ 2)"));
        }
        if self.estimator.inner_samples == 0 {
            return Err(invalid("inner_samples must be positive"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance must be nonnegative"));
        }
        if self.baseline_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return Err(invalid("baseline decay must lie in [0, 1)"));
        }
        if self.average_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return Err(invalid("average decay must lie in [0, 1)"));
        }
        if let Some(r) = &self.refine {
            if !(r.learning_rate > 0.0 && r.learning_rate.is_finite()) {
                return Err(invalid("refine learning rate must be positive"));
            }
        }
        Ok(())
    }
}

/// One line of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub elbo_mean: f64,
    pub elbo_se: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    pub iterations: usize,
}

fn mean(xs: &[TraceRecord]) -> f64 {
    xs.iter().map(|r| r.elbo_mean).sum::<f64>() / xs.len() as f64
}

fn moving_average_converged(trace: &[TraceRecord], cfg: &FitConfig) -> bool {
    let w = cfg.window;
    let n = trace.len();
    if n < cfg.min_iterations.max(2 * w) {
        return false;
    }
    let cur = mean(&trace[n - w..]);
    let prev = mean(&trace[n - 2 * w..n - w]);
    (cur - prev).abs() / prev.abs().max(1.0) < cfg.tolerance
}

fn first_non_finite(xs: &[f64]) -> Option<usize> {
    xs.iter().position(|v| !v.is_finite())
}

fn diverged(iteration: usize, coordinate: Option<usize>, detail: String) -> Error {
    Error::Divergence {
        iteration,
        coordinate,
        detail,
    }
}

/// Runs the ascent loop from `(theta, phi)`.
///
/// Both parameter vectors move on every iteration using gradients from the
/// same joint samples. Divergence is reported with the offending θ coordinate,
/// or with the φ coordinate offset by `theta.len()`.
pub fn fit<R: Rng + ?Sized>(
    h: &Hierarchical<'_>,
    mut theta: Vec<f64>,
    mut phi: Vec<f64>,
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<FitResult> {
    cfg.validate()?;
    h.prior().check_theta(&theta)?;
    if phi.len() != h.aux().num_params() {
        return Err(invalid(format!(
            "auxiliary model expects {} parameters, got {}",
            h.aux().num_params(),
            phi.len()
        )));
    }
    let mut opt_theta = Optimizer::new(cfg.optimizer.clone(), theta.len());
    let mut opt_phi = Optimizer::new(cfg.optimizer.clone(), phi.len());
    let mut baseline: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut stages = vec![(cfg.max_iterations, cfg.optimizer.learning_rate)];
    if let Some(r) = &cfg.refine {
        stages.push((r.iterations, r.learning_rate));
    }
    let mut converged = false;
    let last_stage = stages.len() - 1;
    let mut averages: Option<(Vec<f64>, Vec<f64>)> = None;

    for (stage, (budget, learning_rate)) in stages.into_iter().enumerate() {
        opt_theta.set_learning_rate(learning_rate);
        opt_phi.set_learning_rate(learning_rate);
        let stage_start = trace.len();
        converged = false;
        for _ in 0..budget {
            let iter = trace.len();
            let start = cfg.record_wall_time.then(Instant::now);
            let step = h
                .estimate(&theta, &phi, &cfg.estimator, baseline.as_deref(), rng)
                .map_err(|e| match e {
                    Error::Domain(msg) => diverged(iter, None, msg),
                    other => other,
                })?;
            if !step.elbo.mean.is_finite() {
                return Err(diverged(iter, None, format!("ELBO estimate is {}", step.elbo.mean)));
            }
            if let Some(j) = first_non_finite(&step.grad_theta.mean) {
                return Err(diverged(iter, Some(j), "non-finite θ gradient".into()));
            }
            if let Some(j) = first_non_finite(&step.grad_phi.mean) {
                return Err(diverged(iter, Some(theta.len() + j), "non-finite φ gradient".into()));
            }
            if cfg.update_theta {
                opt_theta.step(&mut theta, &step.grad_theta.mean)?;
            }
            if cfg.update_phi {
                opt_phi.step(&mut phi, &step.grad_phi.mean)?;
            }
            if let Some(j) = first_non_finite(&theta) {
                return Err(diverged(iter, Some(j), "θ became non-finite".into()));
            }
            if let Some(j) = first_non_finite(&phi) {
                return Err(diverged(iter, Some(theta.len() + j), "φ became non-finite".into()));
            }
            if let (Some(decay), true) = (cfg.average_decay, stage == last_stage) {
                let (at, ap) = averages.get_or_insert_with(|| (theta.clone(), phi.clone()));
                for (a, v) in at.iter_mut().zip(&theta).chain(ap.iter_mut().zip(&phi)) {
                    *a = decay * *a + (1.0 - decay) * v;
                }
            }
            if let Some(decay) = cfg.baseline_decay {
                let b = baseline.get_or_insert_with(|| step.signals.clone());
                for (b, s) in b.iter_mut().zip(&step.signals) {
                    *b = decay * *b + (1.0 - decay) * s;
                }
            }
            trace.push(TraceRecord {
                iter,
                elbo_mean: step.elbo.mean,
                elbo_se: step.elbo.std_error,
                grad_norm_theta: step.grad_theta.norm(),
                grad_norm_phi: step.grad_phi.norm(),
                wall_ms: start.map(|t| t.elapsed().as_secs_f64() * 1e3),
            });
            if iter % 1000 == 0 {
                log::debug!("iter {iter}: elbo {:.6} ± {:.2e}", step.elbo.mean, step.elbo.std_error);
            }
            if moving_average_converged(&trace[stage_start..], cfg) {
                converged = true;
                log::info!("stage converged after {} iterations", trace.len() - stage_start);
                break;
            }
        }
    }
    let iterations = trace.len();
    if let Some((at, ap)) = averages {
        theta = at;
        phi = ap;
    }
    Ok(FitResult {
        theta,
        phi,
        trace,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::auxiliary::{Auxiliary, InverseFlow};
    use crate::meanfield::MeanField;
    use crate::model::BernoulliTable;
    use crate::prior::{Covariance, MixturePrior, Prior};
    use crate::stats::sigmoid;

    fn rec(iter: usize, elbo: f64) -> TraceRecord {
        TraceRecord {
            iter,
            elbo_mean: elbo,
            elbo_se: 0.0,
            grad_norm_theta: 0.0,
            grad_norm_phi: 0.0,
            wall_ms: None,
        }
    }

    #[test]
    fn moving_average_rule() {
        let cfg = FitConfig::default();
        let flat: Vec<_> = (0..100).map(|i| rec(i, -3.0)).collect();
        assert!(moving_average_converged(&flat, &cfg));
        assert!(!moving_average_converged(&flat[..99], &cfg));
        let rising: Vec<_> = (0..100).map(|i| rec(i, -3.0 + 0.01 * i as f64)).collect();
        assert!(!moving_average_converged(&rising, &cfg));
    }

    #[test]
    fn single_bernoulli_recovers_posterior() {
        let target = BernoulliTable::single(0.75).unwrap();
        let m = MixturePrior::new(1, 1, Covariance::Diagonal);
        let theta = m.theta_from_parts(&[1.0], &[vec![0.0]], &[vec![1e-3]]);
        let prior = Prior::Mixture(m);
        let aux = Auxiliary::Prior;
        let h = Hierarchical::new(&target, &prior, &aux).unwrap();
        let cfg = FitConfig {
            max_iterations: 3000,
            optimizer: OptimizerConfig {
                learning_rate: 1e-2,
                ..OptimizerConfig::default()
            },
            estimator: EstimatorConfig::with_samples(32),
            min_iterations: 3000,
            ..FitConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let res = fit(&h, theta, vec![], &cfg, &mut rng).unwrap();
        assert_eq!(res.trace.len(), res.iterations);
        let Prior::Mixture(m) = &prior else { unreachable!() };
        let q1 = sigmoid(m.mean(&res.theta, 0)[0]);
        assert!((q1 - 0.75).abs() < 0.02, "q(z=1) = {q1}");
    }

    #[test]
    fn fixed_seed_gives_identical_traces() {
        let target = BernoulliTable::coupled_pair();
        let prior = Prior::Mixture(MixturePrior::new(2, 2, Covariance::Diagonal));
        let aux = Auxiliary::InverseFlow(InverseFlow::new(MeanField::for_model(&target), 2));
        let h = Hierarchical::new(&target, &prior, &aux).unwrap();
        let cfg = FitConfig {
            max_iterations: 40,
            baseline_decay: Some(0.9),
            ..FitConfig::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let theta = prior.init_theta(&mut rng, 1.0);
            let phi = aux.init_phi(&mut rng);
            fit(&h, theta, phi, &cfg, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.iterations, 40);
    }

    #[test]
    fn divergence_is_reported() {
        let target = BernoulliTable::single(0.75).unwrap();
        let m = MixturePrior::new(1, 1, Covariance::Diagonal);
        let theta = m.theta_from_parts(&[1.0], &[vec![0.0]], &[vec![1.0]]);
        let prior = Prior::Mixture(m);
        let aux = Auxiliary::Prior;
        let h = Hierarchical::new(&target, &prior, &aux).unwrap();
        let cfg = FitConfig {
            optimizer: OptimizerConfig {
                learning_rate: 1e308,
                ..OptimizerConfig::default()
            },
            ..FitConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = fit(&h, theta, vec![], &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
