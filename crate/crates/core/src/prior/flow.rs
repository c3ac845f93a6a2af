use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::planar::{block_len, Planar, PlanarStep};
use crate::stats::HALF_LN_2PI;

/// Planar normalizing flow over the mean-field parameters.
///
/// The base is a diagonal Gaussian with learnable mean and log-stddev, so
/// `θ = [base mean (D) | base log-stddev (D) | layer₁ | … | layer_K]` with each
/// layer block laid out as `[w | u | b]`. With the initial base (zero mean, unit
/// scale) the base is standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPrior {
    dim: usize,
    layers: usize,
}

/// Forward record of one sample through the flow.
#[derive(Debug, Clone)]
pub(crate) struct FlowPath {
    pub eps: Vec<f64>,
    /// `v₀ … v_K`; `v_K` is λ.
    pub values: Vec<Vec<f64>>,
    pub steps: Vec<PlanarStep>,
}

impl FlowPath {
    pub fn lambda(&self) -> &[f64] {
        self.values.last().expect("path has a base value")
    }
}

impl FlowPrior {
    pub fn new(dim: usize, layers: usize) -> Self {
        Self { dim, layers }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim + self.layers * block_len(self.dim)
    }

    /// Zero-mean unit-scale base; layer directions and gates `N(0, 0.01)`,
    /// offsets zero.
    pub fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let mut theta = vec![0.0; self.num_params()];
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        for k in 0..self.layers {
            let off = 2 * d + k * block_len(d);
            for v in &mut theta[off..off + 2 * d] {
                *v = normal.sample(rng);
            }
        }
        theta
    }

    pub fn sample_eps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn layer<'a>(&self, theta: &'a [f64], k: usize) -> Planar<'a> {
        let off = 2 * self.dim + k * block_len(self.dim);
        Planar::from_block(&theta[off..off + block_len(self.dim)], self.dim)
    }

    pub(crate) fn forward(&self, theta: &[f64], eps: &[f64]) -> FlowPath {
        let d = self.dim;
        let mean = &theta[..d];
        let log_sd = &theta[d..2 * d];
        let v0: Vec<f64> = (0..d).map(|j| mean[j] + log_sd[j].exp() * eps[j]).collect();
        let mut values = Vec::with_capacity(self.layers + 1);
        let mut steps = Vec::with_capacity(self.layers);
        let mut v = v0.clone();
        values.push(v0);
        for k in 0..self.layers {
            steps.push(self.layer(theta, k).forward(&mut v));
            values.push(v.clone());
        }
        FlowPath {
            eps: eps.to_vec(),
            values,
            steps,
        }
    }

    /// `log q(λ; θ)` at the end of a recorded path.
    pub(crate) fn log_density(&self, theta: &[f64], path: &FlowPath) -> f64 {
        let log_sd = &theta[self.dim..2 * self.dim];
        let base: f64 = path
            .eps
            .iter()
            .zip(log_sd)
            .map(|(e, s)| -0.5 * e * e - HALF_LN_2PI - s)
            .sum();
        base - path.steps.iter().map(PlanarStep::log_det).sum::<f64>()
    }

    /// `∇_λ log q(λ; θ)` by a forward recursion along the path.
    pub(crate) fn grad_lambda_log_density(&self, theta: &[f64], path: &FlowPath) -> Vec<f64> {
        let d = self.dim;
        let log_sd = &theta[d..2 * d];
        let mut g: Vec<f64> = (0..d).map(|j| -path.eps[j] / log_sd[j].exp()).collect();
        for (k, step) in path.steps.iter().enumerate() {
            let layer = self.layer(theta, k);
            let ld = step.log_det_input_grad(layer.w);
            for (gi, l) in g.iter_mut().zip(&ld) {
                *gi -= l;
            }
            step.inverse_transpose_apply(layer.w, &mut g);
        }
        g
    }

    /// Adds `scale · cotangentᵀ ∂λ/∂θ` into `out`.
    pub(crate) fn vjp(&self, theta: &[f64], path: &FlowPath, cotangent: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.dim;
        let mut g: Vec<f64> = cotangent.iter().map(|c| c * scale).collect();
        for k in (0..self.layers).rev() {
            let off = 2 * d + k * block_len(d);
            let layer = self.layer(theta, k);
            layer.backward(
                &path.steps[k],
                &path.values[k],
                &mut g,
                0.0,
                &mut out[off..off + block_len(d)],
            );
        }
        for j in 0..d {
            out[j] += g[j];
            out[d + j] += g[j] * theta[d + j].exp() * path.eps[j];
        }
    }
}
