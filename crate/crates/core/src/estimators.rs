//! Monte Carlo estimators of the hierarchical ELBO and its gradients, plus the
//! plain score-function and reparameterization baselines.
//!
//! One joint sample draws ε, expands it into the prior's weighted branches
//! (K of them for a marginalized mixture), and for each branch draws `z` from
//! the mean-field likelihood. The θ-gradient of a branch is the cotangent
//!
//! ```text
//! c = ĝ_MF(λ) + ∇_λ[log r(λ|z) − log q(λ; θ)] + Σ_i V_i(z) log r_i(λ|z)
//! ```
//!
//! pulled back through `∂λ/∂θ`. `ĝ_MF` is the Rao-Blackwellized mean-field
//! gradient re-estimated with its own inner draws. The explicit
//! `∂_θ log q(λ; θ)` term has zero expectation and is omitted.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auxiliary::Auxiliary;
use crate::error::{invalid, Error, Result};
use crate::estimate::{map_samples, GradientEstimate, ScalarEstimate};
use crate::meanfield::MeanField;
use crate::model::TargetModel;
use crate::prior::{Prior, PriorNoise};
use crate::stats::{positive, sigmoid, Family};
use rand_distr::{Distribution, StandardNormal};

/// Sampling options shared by every hierarchical estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Joint samples per estimate.
    pub samples: usize,
    /// Inner `z` draws per branch for the mean-field gradient term.
    pub inner_samples: usize,
    /// Weight each factor's score by its own `log r_i` rather than all of `log r`.
    pub localize_r: bool,
    /// Sum over mixture components instead of sampling one.
    pub marginalize_components: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            inner_samples: 1,
            localize_r: true,
            marginalize_components: true,
        }
    }
}

impl EstimatorConfig {
    pub fn with_samples(samples: usize) -> Self {
        Self {
            samples,
            ..Self::default()
        }
    }
}

/// Everything one optimizer step consumes.
#[derive(Debug, Clone)]
pub struct StepEstimate {
    pub elbo: ScalarEstimate,
    pub grad_theta: GradientEstimate,
    pub grad_phi: GradientEstimate,
    /// Mean per-factor learning signals for baselines: `log p_i − log q_i`,
    /// followed by the `r` signal of each factor when `r` is an inverse flow.
    pub signals: Vec<f64>,
}

struct SampleOut {
    value: f64,
    grad_theta: Vec<f64>,
    grad_phi: Vec<f64>,
    signals: Vec<f64>,
}

/// A target, a prior and an auxiliary model checked for consistent shapes.
#[derive(Clone, Copy)]
pub struct Hierarchical<'a> {
    model: &'a dyn TargetModel,
    prior: &'a Prior,
    aux: &'a Auxiliary,
}

impl<'a> Hierarchical<'a> {
    pub fn new(model: &'a dyn TargetModel, prior: &'a Prior, aux: &'a Auxiliary) -> Result<Self> {
        let mf = MeanField::for_model(model);
        if prior.dim() != mf.param_dim() {
            return Err(invalid(format!(
                "prior has dimension {} but the mean-field family needs {}",
                prior.dim(),
                mf.param_dim()
            )));
        }
        match aux {
            Auxiliary::InverseFlow(f) => {
                if f.mean_field() != &mf {
                    return Err(invalid("auxiliary model was built for different factors"));
                }
                if matches!(prior, Prior::PointMass { .. }) {
                    return Err(invalid("a point-mass prior only supports the prior-valued auxiliary model"));
                }
            }
            Auxiliary::Prior => {}
        }
        Ok(Self { model, prior, aux })
    }

    pub fn model(&self) -> &'a dyn TargetModel {
        self.model
    }

    pub fn prior(&self) -> &'a Prior {
        self.prior
    }

    pub fn aux(&self) -> &'a Auxiliary {
        self.aux
    }

    /// Length of [`StepEstimate::signals`] and of a baseline.
    pub fn signal_len(&self) -> usize {
        let d = self.model.factor_specs().len();
        match self.aux {
            Auxiliary::Prior => d,
            Auxiliary::InverseFlow(_) => 2 * d,
        }
    }

    fn check(&self, theta: &[f64], phi: &[f64], n: usize, min: usize) -> Result<()> {
        self.prior.check_theta(theta)?;
        if phi.len() != self.aux.num_params() {
            return Err(invalid(format!(
                "auxiliary model expects {} parameters, got {}",
                self.aux.num_params(),
                phi.len()
            )));
        }
        if let Some(j) = phi.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("auxiliary parameter {j} is not finite")));
        }
        if n < min {
            return Err(invalid(format!("need at least {min} samples, got {n}")));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(
        &self,
        mf: &MeanField,
        theta: &[f64],
        phi: &[f64],
        cfg: &EstimatorConfig,
        baseline: Option<&[f64]>,
        want_grad: bool,
        rng: &mut R,
    ) -> Result<SampleOut> {
        let d = mf.num_factors();
        let dim = mf.param_dim();
        let noise = self.prior.sample_eps(theta, cfg.marginalize_components, rng);
        let branches = self.prior.branches(theta, &noise)?;
        let mut out = SampleOut {
            value: 0.0,
            grad_theta: if want_grad { vec![0.0; theta.len()] } else { Vec::new() },
            grad_phi: if want_grad { vec![0.0; phi.len()] } else { Vec::new() },
            signals: vec![0.0; self.signal_len()],
        };
        let mut branch_values = Vec::with_capacity(branches.len());
        let mut log_qi = vec![0.0; d];
        let mut scores = vec![0.0; dim];
        for branch in &branches {
            if branch.weight == 0.0 {
                continue;
            }
            let lambda = &branch.lambda;
            if let Some(j) = lambda.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    iteration: 0,
                    coordinate: Some(j),
                    detail: "non-finite λ drawn from the prior".into(),
                });
            }
            let z = mf.sample_unchecked(lambda, rng);
            let log_q_z = mf.factor_terms(lambda, &z, &mut log_qi, &mut scores);
            let mut f = self.model.log_joint(&z)? - log_q_z;
            let aux_eval = match self.aux {
                Auxiliary::Prior => None,
                Auxiliary::InverseFlow(a) => {
                    let ev = a.eval(phi, lambda, &z);
                    f += ev.log_r() - self.prior.log_q(theta, branch)?;
                    Some((a, ev))
                }
            };
            out.value += branch.weight * f;
            branch_values.push((branch.component, f));
            if !want_grad {
                continue;
            }

            let mut cot = vec![0.0; dim];
            let mut signals = vec![0.0; d];
            let inner_scale = 1.0 / cfg.inner_samples as f64;
            for _ in 0..cfg.inner_samples {
                mf.add_local_gradient_sample(self.model, lambda, baseline, inner_scale, rng, &mut cot, &mut signals)?;
            }
            for (s, v) in out.signals.iter_mut().zip(&signals) {
                *s += branch.weight * v;
            }
            if let Some((a, ev)) = &aux_eval {
                let mut g_phi = vec![0.0; phi.len()];
                a.backward(phi, ev, 1.0, Some(&mut g_phi), Some(&mut cot));
                for (o, g) in out.grad_phi.iter_mut().zip(&g_phi) {
                    *o += branch.weight * g;
                }
                let g_lq = self.prior.grad_lambda_log_q(theta, branch)?;
                for (c, g) in cot.iter_mut().zip(&g_lq) {
                    *c -= g;
                }
                let total = ev.log_r();
                for i in 0..d {
                    let signal = if cfg.localize_r { ev.local[i] } else { total };
                    out.signals[d + i] += branch.weight * signal;
                    let centered = signal - baseline.map_or(0.0, |b| b[d + i]);
                    for j in mf.slice(i) {
                        cot[j] += scores[j] * centered;
                    }
                }
            }
            self.prior
                .accumulate_vjp(theta, &noise, branch, &cot, branch.weight, &mut out.grad_theta)?;
        }
        if want_grad {
            if let Prior::Mixture(m) = self.prior {
                let weights = m.weights(theta);
                match noise {
                    PriorNoise::Mixture { component: Some(k), .. } => {
                        let f = branch_values[0].1;
                        for (j, w) in weights.iter().enumerate() {
                            let indicator = if j == k { 1.0 } else { 0.0 };
                            out.grad_theta[j] += (indicator - w) * f;
                        }
                    }
                    _ => m.logit_grad(&weights, &branch_values, 1.0, &mut out.grad_theta),
                }
            }
        }
        Ok(out)
    }

    fn run<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        phi: &[f64],
        cfg: &EstimatorConfig,
        baseline: Option<&[f64]>,
        want_grad: bool,
        rng: &mut R,
    ) -> Result<Vec<SampleOut>> {
        if cfg.inner_samples == 0 {
            return Err(invalid("inner sample count must be positive"));
        }
        let mf = MeanField::for_model(self.model);
        if let Some(b) = baseline {
            if b.len() != self.signal_len() {
                return Err(invalid(format!("baseline needs {} values", self.signal_len())));
            }
        }
        map_samples(cfg.samples, rng, |_, r| {
            self.sample(&mf, theta, phi, cfg, baseline, want_grad, r)
        })
    }

    /// Hierarchical ELBO `E[log p + log r − Σ log q(z_i|λ_i) − log q(λ; θ)]`.
    pub fn elbo<R: Rng + ?Sized>(&self, theta: &[f64], phi: &[f64], rng: &mut R, n: usize) -> Result<ScalarEstimate> {
        self.check(theta, phi, n, 2)?;
        let cfg = EstimatorConfig::with_samples(n);
        let out = self.run(theta, phi, &cfg, None, false, rng)?;
        let values: Vec<f64> = out.iter().map(|s| s.value).collect();
        Ok(ScalarEstimate::from_samples(&values))
    }

    /// ELBO, both gradients and the factor signals from one set of samples.
    pub fn estimate<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        phi: &[f64],
        cfg: &EstimatorConfig,
        baseline: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<StepEstimate> {
        self.check(theta, phi, cfg.samples, 2)?;
        let out = self.run(theta, phi, cfg, baseline, true, rng)?;
        let values: Vec<f64> = out.iter().map(|s| s.value).collect();
        let n = out.len() as f64;
        let mut signals = vec![0.0; out[0].signals.len()];
        for s in &out {
            for (a, b) in signals.iter_mut().zip(&s.signals) {
                *a += b / n;
            }
        }
        let (gt, gp): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
            out.into_iter().map(|s| (s.grad_theta, s.grad_phi)).unzip();
        Ok(StepEstimate {
            elbo: ScalarEstimate::from_samples(&values),
            grad_theta: GradientEstimate::from_samples(&gt),
            grad_phi: GradientEstimate::from_samples(&gp),
            signals,
        })
    }

    pub fn grad_theta<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        phi: &[f64],
        cfg: &EstimatorConfig,
        rng: &mut R,
    ) -> Result<GradientEstimate> {
        Ok(self.estimate(theta, phi, cfg, None, rng)?.grad_theta)
    }

    pub fn grad_phi<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        phi: &[f64],
        cfg: &EstimatorConfig,
        rng: &mut R,
    ) -> Result<GradientEstimate> {
        Ok(self.estimate(theta, phi, cfg, None, rng)?.grad_phi)
    }
}

/// Hierarchical ELBO estimate over `n` joint samples.
pub fn hierarchical_elbo<R: Rng + ?Sized>(
    model: &dyn TargetModel,
    prior: &Prior,
    aux: &Auxiliary,
    theta: &[f64],
    phi: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<ScalarEstimate> {
    Hierarchical::new(model, prior, aux)?.elbo(theta, phi, rng, n)
}

/// θ-gradient of the hierarchical ELBO with default options and `n` samples.
pub fn grad_theta<R: Rng + ?Sized>(
    model: &dyn TargetModel,
    prior: &Prior,
    aux: &Auxiliary,
    theta: &[f64],
    phi: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<GradientEstimate> {
    Hierarchical::new(model, prior, aux)?.grad_theta(theta, phi, &EstimatorConfig::with_samples(n), rng)
}

/// φ-gradient of the hierarchical ELBO with default options and `n` samples.
pub fn grad_phi<R: Rng + ?Sized>(
    model: &dyn TargetModel,
    prior: &Prior,
    aux: &Auxiliary,
    theta: &[f64],
    phi: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<GradientEstimate> {
    Hierarchical::new(model, prior, aux)?.grad_phi(theta, phi, &EstimatorConfig::with_samples(n), rng)
}

/// Global score-function gradient `E[V(z)(log p(x,z) − log q(z|λ))]` of the
/// mean-field ELBO.
pub fn score_gradient<R: Rng + ?Sized>(
    model: &dyn TargetModel,
    lambda: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<GradientEstimate> {
    if n < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let mf = MeanField::for_model(model);
    mf.check_lambda(lambda)?;
    let samples = map_samples(n, rng, |_, r| {
        let z = mf.sample_unchecked(lambda, r);
        let mut log_qi = vec![0.0; mf.num_factors()];
        let mut scores = vec![0.0; lambda.len()];
        let lq = mf.factor_terms(lambda, &z, &mut log_qi, &mut scores);
        let signal = model.log_joint(&z)? - lq;
        Ok(scores.into_iter().map(|s| s * signal).collect())
    })?;
    Ok(GradientEstimate::from_samples(&samples))
}

/// Reparameterization gradient `E[(∇_z log p − ∇_z log q) ∇_λ z]` for
/// all-Gaussian mean-field families, with `z = μ + softplus(ρ) ε`.
pub fn reparam_gradient<R: Rng + ?Sized>(
    model: &dyn TargetModel,
    lambda: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<GradientEstimate> {
    if n < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let mf = MeanField::for_model(model);
    mf.check_lambda(lambda)?;
    if mf.specs().iter().any(|s| s.family() != Family::Gaussian) {
        return Err(Error::Unsupported(
            "reparameterization needs every factor to be Gaussian".into(),
        ));
    }
    if model.grad_log_joint(&vec![0.0; mf.num_factors()]).is_none() {
        return Err(Error::Unsupported("model does not provide ∇_z log p".into()));
    }
    let d = mf.num_factors();
    let samples = map_samples(n, rng, |_, r| {
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
        let mut z = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for i in 0..d {
            let l = &lambda[mf.slice(i)];
            sd[i] = positive(l[1]);
            z[i] = l[0] + sd[i] * eps[i];
        }
        let gp = model
            .grad_log_joint(&z)
            .ok_or_else(|| Error::Unsupported("model does not provide ∇_z log p".into()))??;
        let mut g = vec![0.0; lambda.len()];
        for i in 0..d {
            let signal = gp[i] + eps[i] / sd[i];
            let s = mf.slice(i);
            g[s.start] = signal;
            g[s.start + 1] = signal * eps[i] * sigmoid(lambda[s.start + 1]);
        }
        Ok(g)
    })?;
    Ok(GradientEstimate::from_samples(&samples))
}

#[cfg(test)]
mod tests;
