//! The full analytic-gradient battery: every hand-derived gradient in the
//! crate against finite differences at many random configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradcheck::{check_gradient, Tolerance};
use crate::auxiliary::InverseFlow;
use crate::error::{invalid, Result};
use crate::meanfield::MeanField;
use crate::prior::planar::{block_len, Planar};
use crate::prior::{Branch, Covariance, FlowPrior, MixturePrior, Prior, PriorNoise};
use crate::stats::{self, FactorSpec};

pub const CHECK_NAMES: [&str; 13] = [
    "score-bernoulli",
    "score-poisson",
    "score-gaussian",
    "score-gamma",
    "planar-logdet-input",
    "flow-theta-vjp",
    "flow-lambda-log-q",
    "mixture-diagonal-theta-vjp",
    "mixture-full-theta-vjp",
    "mixture-diagonal-lambda-log-q",
    "mixture-full-lambda-log-q",
    "aux-phi-log-r",
    "aux-lambda-log-r",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub seed: u64,
    pub configurations: usize,
    pub step: f64,
    pub tolerance: Tolerance,
    /// Scales the analytic gradient of the named check by 1.01. Test hook for
    /// confirming that the battery can fail.
    pub inject_fault: Option<String>,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            configurations: 50,
            step: 1e-4,
            tolerance: Tolerance::default(),
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub configurations: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(configuration, coordinate)` of the first failing coordinate.
    pub first_failure: Option<(usize, usize)>,
    pub non_finite: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub checks: Vec<CheckSummary>,
    pub passed: bool,
}

impl BatteryReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

type Objective = Box<dyn Fn(&[f64]) -> f64>;

/// One random configuration: objective, its analytic gradient, and the point.
type Case = (Objective, Vec<f64>, Vec<f64>);

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn score_case(spec: FactorSpec, rng: &mut ChaCha8Rng) -> Result<Case> {
    let lambda = uniform(rng, spec.param_dim(), -1.5, 1.5);
    let z = match spec.family() {
        stats::Family::Bernoulli => rng.random_range(0..2) as f64,
        stats::Family::Poisson => rng.random_range(0..10) as f64,
        stats::Family::Gaussian => rng.random_range(-3.0..3.0),
        stats::Family::Gamma => rng.random_range(0.1..5.0),
    };
    let g = stats::score(spec, &lambda, z)?;
    Ok((
        Box::new(move |l: &[f64]| stats::log_density(spec, l, z).unwrap_or(f64::NAN)),
        g,
        lambda,
    ))
}

fn planar_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let d = 3;
    let block = uniform(rng, block_len(d), -1.5, 1.5);
    let v = uniform(rng, d, -2.0, 2.0);
    let layer = Planar::from_block(&block, d);
    let step = layer.forward(&mut v.clone());
    let g = step.log_det_input_grad(&block[..d]);
    Ok((
        Box::new(move |x: &[f64]| Planar::from_block(&block, d).forward(&mut x.to_vec()).log_det()),
        g,
        v,
    ))
}

fn random_flow(rng: &mut ChaCha8Rng) -> (FlowPrior, Vec<f64>, Vec<f64>) {
    let flow = FlowPrior::new(3, 2);
    let theta = uniform(rng, flow.num_params(), -1.5, 1.5);
    let eps = uniform(rng, 3, -2.0, 2.0);
    (flow, theta, eps)
}

fn contracted(prior: Prior, noise: PriorNoise, cot: Vec<f64>) -> Objective {
    Box::new(move |th: &[f64]| match prior.lambda_of_eps(th, &noise) {
        Ok(l) => l.iter().zip(&cot).map(|(a, b)| a * b).sum(),
        Err(_) => f64::NAN,
    })
}

fn flow_vjp_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (flow, theta, eps) = random_flow(rng);
    let prior = Prior::Flow(flow);
    let noise = PriorNoise::Flow { eps };
    let cot = uniform(rng, 3, -1.0, 1.0);
    let g = prior.grad_theta_lambda(&theta, &noise, &cot)?;
    Ok((contracted(prior, noise, cot), g, theta))
}

/// `d/dε log q(λ(ε)) = (∂λ/∂ε)ᵀ ∇_λ log q`, where the pullback onto the base
/// mean gives `(∂λ/∂v₀)ᵀ` and `∂v₀/∂ε = diag(σ)`.
fn flow_log_q_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (flow, theta, eps) = random_flow(rng);
    let prior = Prior::Flow(flow.clone());
    let noise = PriorNoise::Flow { eps: eps.clone() };
    let branch = prior.branches(&theta, &noise)?.remove(0);
    let g_lambda = prior.grad_lambda_log_q(&theta, &branch)?;
    let pulled = prior.grad_theta_lambda(&theta, &noise, &g_lambda)?;
    let g = (0..3).map(|j| pulled[j] * theta[3 + j].exp()).collect();
    Ok((
        Box::new(move |e: &[f64]| flow.log_density(&theta, &flow.forward(&theta, e))),
        g,
        eps,
    ))
}

fn random_mixture(rng: &mut ChaCha8Rng, cov: Covariance) -> (Prior, Vec<f64>) {
    let prior = Prior::Mixture(MixturePrior::new(3, 2, cov));
    let theta = uniform(rng, prior.num_params(), -1.0, 1.0);
    (prior, theta)
}

fn mixture_vjp_case(rng: &mut ChaCha8Rng, cov: Covariance) -> Result<Case> {
    let (prior, theta) = random_mixture(rng, cov);
    let noise = PriorNoise::Mixture {
        component: Some(rng.random_range(0..2)),
        u: uniform(rng, 3, -2.0, 2.0),
    };
    let cot = uniform(rng, 3, -1.0, 1.0);
    let g = prior.grad_theta_lambda(&theta, &noise, &cot)?;
    Ok((contracted(prior, noise, cot), g, theta))
}

fn mixture_log_q_case(rng: &mut ChaCha8Rng, cov: Covariance) -> Result<Case> {
    let (prior, theta) = random_mixture(rng, cov);
    let lambda = uniform(rng, 3, -2.0, 2.0);
    let branch = Branch {
        component: 0,
        weight: 1.0,
        lambda: lambda.clone(),
        path: None,
    };
    let g = prior.grad_lambda_log_q(&theta, &branch)?;
    Ok((
        Box::new(move |l: &[f64]| prior.log_q_at(&theta, l).unwrap_or(f64::NAN)),
        g,
        lambda,
    ))
}

/// Auxiliary model over one factor of each family, with nonzero data coefficients.
fn random_aux(rng: &mut ChaCha8Rng) -> (InverseFlow, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mf = MeanField::new(vec![
        FactorSpec::bernoulli(),
        FactorSpec::poisson(),
        FactorSpec::gaussian(),
        FactorSpec::gamma(),
    ]);
    let aux = InverseFlow::new(mf, 2);
    let phi = uniform(rng, aux.num_params(), -0.8, 0.8);
    let lambda = uniform(rng, aux.mean_field().param_dim(), -1.5, 1.5);
    let z = vec![
        rng.random_range(0..2) as f64,
        rng.random_range(0..8) as f64,
        rng.random_range(-2.0..2.0),
        rng.random_range(0.2..4.0),
    ];
    (aux, phi, lambda, z)
}

fn aux_phi_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (aux, phi, lambda, z) = random_aux(rng);
    let g = aux.grad_phi_log_r(&phi, &lambda, &z)?;
    Ok((
        Box::new(move |p: &[f64]| aux.log_r(p, &lambda, &z).unwrap_or(f64::NAN)),
        g,
        phi,
    ))
}

fn aux_lambda_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (aux, phi, lambda, z) = random_aux(rng);
    let g = aux.grad_lambda_log_r(&phi, &lambda, &z)?;
    Ok((
        Box::new(move |l: &[f64]| aux.log_r(&phi, l, &z).unwrap_or(f64::NAN)),
        g,
        lambda,
    ))
}

fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    match name {
        "score-bernoulli" => score_case(FactorSpec::bernoulli(), rng),
        "score-poisson" => score_case(FactorSpec::poisson(), rng),
        "score-gaussian" => score_case(FactorSpec::gaussian(), rng),
        "score-gamma" => score_case(FactorSpec::gamma(), rng),
        "planar-logdet-input" => planar_case(rng),
        "flow-theta-vjp" => flow_vjp_case(rng),
        "flow-lambda-log-q" => flow_log_q_case(rng),
        "mixture-diagonal-theta-vjp" => mixture_vjp_case(rng, Covariance::Diagonal),
        "mixture-full-theta-vjp" => mixture_vjp_case(rng, Covariance::Full),
        "mixture-diagonal-lambda-log-q" => mixture_log_q_case(rng, Covariance::Diagonal),
        "mixture-full-lambda-log-q" => mixture_log_q_case(rng, Covariance::Full),
        "aux-phi-log-r" => aux_phi_case(rng),
        "aux-lambda-log-r" => aux_lambda_case(rng),
        other => Err(invalid(format!("unknown gradient check {other:?}"))),
    }
}

/// Runs every check in [`CHECK_NAMES`].
pub fn run_gradient_battery(cfg: &BatteryConfig) -> Result<BatteryReport> {
    if let Some(f) = &cfg.inject_fault {
        if !CHECK_NAMES.contains(&f.as_str()) {
            return Err(invalid(format!("cannot inject a fault into unknown check {f:?}")));
        }
    }
    let mut checks = Vec::with_capacity(CHECK_NAMES.len());
    for (i, name) in CHECK_NAMES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let faulty = cfg.inject_fault.as_deref() == Some(*name);
        let mut summary = CheckSummary {
            name: name.to_string(),
            configurations: cfg.configurations,
            coordinates: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            first_failure: None,
            non_finite: false,
            passed: true,
        };
        for c in 0..cfg.configurations {
            let (f, mut g, x) = make_case(name, &mut rng)?;
            if faulty {
                g.iter_mut().for_each(|v| *v *= 1.01);
            }
            let r = check_gradient(f, &g, &x, cfg.step, cfg.tolerance);
            summary.coordinates += r.coordinates.len();
            summary.max_rel_error = summary.max_rel_error.max(r.max_rel_error);
            summary.max_abs_error = summary.max_abs_error.max(r.max_abs_error);
            summary.non_finite |= r.non_finite;
            if !r.passed && summary.first_failure.is_none() {
                let j = r.coordinates.iter().position(|c| !c.passed).unwrap_or(0);
                summary.first_failure = Some((c, j));
            }
            summary.passed &= r.passed;
        }
        checks.push(summary);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(BatteryReport { checks, passed })
}
