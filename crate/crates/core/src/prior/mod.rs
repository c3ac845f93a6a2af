//! Variational priors `q(λ; θ)` over the mean-field parameters.
//!
//! Every prior is reparameterized: noise ε drawn free of θ is mapped to λ.
//! Mixture priors expose all K branches at once so that the component index
//! can be summed out instead of sampled.

mod flow;
mod mixture;
pub mod planar;

pub use flow::FlowPrior;
pub use mixture::{Covariance, MixturePrior};

pub(crate) use flow::FlowPath;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// A variational prior. Parameters θ are kept outside as a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// `λ = θ`: the hierarchical model collapses to plain mean-field.
    PointMass { dim: usize },
    Mixture(MixturePrior),
    Flow(FlowPrior),
}

/// Parameter-free noise behind one draw of λ.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorNoise {
    None,
    /// Standard-normal vector `u`; the component is set only when it was
    /// sampled rather than marginalized.
    Mixture { component: Option<usize>, u: Vec<f64> },
    /// Standard-normal base draw.
    Flow { eps: Vec<f64> },
}

/// One reparameterized λ with the probability weight it carries.
#[derive(Debug, Clone)]
pub struct Branch {
    pub component: usize,
    pub weight: f64,
    pub lambda: Vec<f64>,
    pub(crate) path: Option<FlowPath>,
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::PointMass { dim } => *dim,
            Prior::Mixture(m) => m.dim(),
            Prior::Flow(f) => f.dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Prior::PointMass { dim } => *dim,
            Prior::Mixture(m) => m.num_params(),
            Prior::Flow(f) => f.num_params(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Prior::PointMass { .. } => "point-mass",
            Prior::Mixture(_) => "mixture",
            Prior::Flow(_) => "flow",
        }
    }

    /// Default initial θ. `spread` scales the random mixture means.
    pub fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64) -> Vec<f64> {
        match self {
            Prior::PointMass { dim } => vec![0.0; *dim],
            Prior::Mixture(m) => m.init_theta(rng, spread),
            Prior::Flow(f) => f.init_theta(rng),
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(invalid(format!(
                "{} prior expects {} parameters, got {}",
                self.name(),
                self.num_params(),
                theta.len()
            )));
        }
        if let Some(j) = theta.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("prior parameter {j} is not finite")));
        }
        Ok(())
    }

    /// Draws ε. For mixtures the component index is drawn only when
    /// `marginalize` is false.
    pub fn sample_eps<R: Rng + ?Sized>(&self, theta: &[f64], marginalize: bool, rng: &mut R) -> PriorNoise {
        match self {
            Prior::PointMass { .. } => PriorNoise::None,
            Prior::Mixture(m) => {
                let component = (!marginalize).then(|| {
                    let dist = WeightedIndex::new(m.weights(theta)).expect("softmax weights are valid");
                    dist.sample(rng)
                });
                let u = (0..m.dim()).map(|_| StandardNormal.sample(rng)).collect();
                PriorNoise::Mixture { component, u }
            }
            Prior::Flow(f) => PriorNoise::Flow { eps: f.sample_eps(rng) },
        }
    }

    fn noise_mismatch(&self) -> Error {
        invalid(format!("noise does not belong to a {} prior", self.name()))
    }

    /// All weighted branches for this noise: K for a marginalized mixture,
    /// otherwise one branch of weight 1.
    pub fn branches(&self, theta: &[f64], noise: &PriorNoise) -> Result<Vec<Branch>> {
        match (self, noise) {
            (Prior::PointMass { .. }, PriorNoise::None) => Ok(vec![Branch {
                component: 0,
                weight: 1.0,
                lambda: theta.to_vec(),
                path: None,
            }]),
            (Prior::Mixture(m), PriorNoise::Mixture { component, u }) => match component {
                Some(k) => Ok(vec![Branch {
                    component: *k,
                    weight: 1.0,
                    lambda: m.branch(theta, *k, u),
                    path: None,
                }]),
                None => Ok(m
                    .weights(theta)
                    .into_iter()
                    .enumerate()
                    .map(|(k, w)| Branch {
                        component: k,
                        weight: w,
                        lambda: m.branch(theta, k, u),
                        path: None,
                    })
                    .collect()),
            },
            (Prior::Flow(f), PriorNoise::Flow { eps }) => {
                let path = f.forward(theta, eps);
                Ok(vec![Branch {
                    component: 0,
                    weight: 1.0,
                    lambda: path.lambda().to_vec(),
                    path: Some(path),
                }])
            }
            _ => Err(self.noise_mismatch()),
        }
    }

    /// `λ(ε; θ)`. Mixture noise must carry a component index.
    pub fn lambda_of_eps(&self, theta: &[f64], noise: &PriorNoise) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        if let PriorNoise::Mixture { component: None, .. } = noise {
            return Err(invalid("mixture noise has no component; use branches()"));
        }
        Ok(self.branches(theta, noise)?.remove(0).lambda)
    }

    /// All K pairs `(π_k, μ_k + L_k u)` for one shared `u`.
    pub fn mixture_component_sweep(&self, theta: &[f64], u: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        match self {
            Prior::Mixture(m) => Ok(m
                .weights(theta)
                .into_iter()
                .enumerate()
                .map(|(k, w)| (w, m.branch(theta, k, u)))
                .collect()),
            _ => Err(Error::Unsupported(format!(
                "component sweep needs a mixture prior, not {}",
                self.name()
            ))),
        }
    }

    /// `log q(λ; θ)` at an arbitrary λ. Flows only know their density along
    /// generated paths and refuse.
    pub fn log_q_at(&self, theta: &[f64], lambda: &[f64]) -> Result<f64> {
        match self {
            Prior::Mixture(m) => {
                if lambda.len() != m.dim() {
                    return Err(invalid("λ has the wrong dimension"));
                }
                Ok(m.log_density(theta, lambda))
            }
            Prior::Flow(_) => Err(Error::Unsupported(
                "flow density is only available along a sampled path".into(),
            )),
            Prior::PointMass { .. } => Err(Error::Unsupported("a point mass has no density".into())),
        }
    }

    /// `log q(λ; θ)` at a branch produced by [`Prior::branches`].
    pub fn log_q(&self, theta: &[f64], branch: &Branch) -> Result<f64> {
        match (self, &branch.path) {
            (Prior::Flow(f), Some(path)) => Ok(f.log_density(theta, path)),
            (Prior::Flow(_), None) => Err(Error::Unsupported("branch carries no flow path".into())),
            _ => self.log_q_at(theta, &branch.lambda),
        }
    }

    /// `∇_λ log q(λ; θ)` at a branch, θ held fixed.
    pub fn grad_lambda_log_q(&self, theta: &[f64], branch: &Branch) -> Result<Vec<f64>> {
        match (self, &branch.path) {
            (Prior::Flow(f), Some(path)) => Ok(f.grad_lambda_log_density(theta, path)),
            (Prior::Mixture(m), _) => Ok(m.grad_lambda_log_density(theta, &branch.lambda)),
            (Prior::Flow(_), None) => Err(Error::Unsupported("branch carries no flow path".into())),
            (Prior::PointMass { .. }, _) => Err(Error::Unsupported("a point mass has no density".into())),
        }
    }

    /// Adds `scale · cotangentᵀ ∂λ/∂θ` for `branch` into `out`.
    pub fn accumulate_vjp(
        &self,
        theta: &[f64],
        noise: &PriorNoise,
        branch: &Branch,
        cotangent: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        match (self, noise) {
            (Prior::PointMass { .. }, PriorNoise::None) => {
                for (o, c) in out.iter_mut().zip(cotangent) {
                    *o += scale * c;
                }
                Ok(())
            }
            (Prior::Mixture(m), PriorNoise::Mixture { u, .. }) => {
                m.vjp(theta, branch.component, u, cotangent, scale, out);
                Ok(())
            }
            (Prior::Flow(f), PriorNoise::Flow { .. }) => {
                let path = branch
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Unsupported("branch carries no flow path".into()))?;
                f.vjp(theta, path, cotangent, scale, out);
                Ok(())
            }
            _ => Err(self.noise_mismatch()),
        }
    }

    /// `cotangentᵀ ∂λ(ε; θ)/∂θ` for a single-branch noise.
    pub fn grad_theta_lambda(&self, theta: &[f64], noise: &PriorNoise, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        if cotangent.len() != self.dim() {
            return Err(invalid("cotangent has the wrong dimension"));
        }
        let branch = match noise {
            PriorNoise::Mixture { component: None, .. } => {
                return Err(invalid("mixture noise has no component"));
            }
            _ => self.branches(theta, noise)?.remove(0),
        };
        let mut out = vec![0.0; self.num_params()];
        self.accumulate_vjp(theta, noise, &branch, cotangent, 1.0, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
