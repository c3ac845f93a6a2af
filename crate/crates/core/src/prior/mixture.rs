use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::stats::{log_sum_exp, sigmoid, softplus, softplus_inv, HALF_LN_2PI};

/// Covariance structure of each mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    /// Per-coordinate log-stddevs.
    #[default]
    Diagonal,
    /// Lower-triangular Cholesky factor, rows stored in order, diagonal
    /// through softplus.
    Full,
}

/// Gaussian mixture over the mean-field parameters.
///
/// `θ = [logits (K) | means (K·D) | scales (K·S)]` where `S = D` for diagonal
/// components and `D(D+1)/2` for full ones.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    dim: usize,
    components: usize,
    covariance: Covariance,
}

impl MixturePrior {
    pub fn new(dim: usize, components: usize, covariance: Covariance) -> Self {
        Self {
            dim,
            components,
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn covariance(&self) -> Covariance {
        self.covariance
    }

    fn scale_len(&self) -> usize {
        match self.covariance {
            Covariance::Diagonal => self.dim,
            Covariance::Full => self.dim * (self.dim + 1) / 2,
        }
    }

    pub fn num_params(&self) -> usize {
        self.components * (1 + self.dim + self.scale_len())
    }

    pub fn mean_offset(&self, k: usize) -> usize {
        self.components + k * self.dim
    }

    pub fn scale_offset(&self, k: usize) -> usize {
        self.components * (1 + self.dim) + k * self.scale_len()
    }

    /// Uniform weights, means `N(0, spread²)`, unit scales.
    pub fn init_theta<R: Rng + ?Sized>(&self, rng: &mut R, spread: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.num_params()];
        for k in 0..self.components {
            let m = self.mean_offset(k);
            for v in &mut theta[m..m + self.dim] {
                let e: f64 = StandardNormal.sample(rng);
                *v = spread * e;
            }
            if self.covariance == Covariance::Full {
                let s = self.scale_offset(k);
                for r in 0..self.dim {
                    theta[s + r * (r + 1) / 2 + r] = softplus_inv(1.0);
                }
            }
        }
        theta
    }

    /// Builds θ from explicit weights, means, and diagonal stddevs.
    pub fn theta_from_parts(&self, weights: &[f64], means: &[Vec<f64>], stddevs: &[Vec<f64>]) -> Vec<f64> {
        let mut theta = vec![0.0; self.num_params()];
        for k in 0..self.components {
            theta[k] = weights[k].ln();
            let m = self.mean_offset(k);
            theta[m..m + self.dim].copy_from_slice(&means[k]);
            let s = self.scale_offset(k);
            for r in 0..self.dim {
                match self.covariance {
                    Covariance::Diagonal => theta[s + r] = stddevs[k][r].ln(),
                    Covariance::Full => theta[s + r * (r + 1) / 2 + r] = softplus_inv(stddevs[k][r]),
                }
            }
        }
        theta
    }

    pub fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let logits = &theta[..self.components];
        let lse = log_sum_exp(logits).expect("at least one component");
        logits.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn mean<'a>(&self, theta: &'a [f64], k: usize) -> &'a [f64] {
        let m = self.mean_offset(k);
        &theta[m..m + self.dim]
    }

    /// Dense lower-triangular scale factor of component `k`, row-major.
    pub fn cholesky(&self, theta: &[f64], k: usize) -> Vec<f64> {
        let d = self.dim;
        let s = &theta[self.scale_offset(k)..self.scale_offset(k) + self.scale_len()];
        let mut l = vec![0.0; d * d];
        match self.covariance {
            Covariance::Diagonal => {
                for r in 0..d {
                    l[r * d + r] = s[r].exp();
                }
            }
            Covariance::Full => {
                for r in 0..d {
                    for c in 0..r {
                        l[r * d + c] = s[r * (r + 1) / 2 + c];
                    }
                    l[r * d + r] = softplus(s[r * (r + 1) / 2 + r]);
                }
            }
        }
        l
    }

    /// `λ = μ_k + L_k u`.
    pub fn branch(&self, theta: &[f64], k: usize, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mean = self.mean(theta, k);
        let s = &theta[self.scale_offset(k)..];
        match self.covariance {
            Covariance::Diagonal => (0..d).map(|j| mean[j] + s[j].exp() * u[j]).collect(),
            Covariance::Full => (0..d)
                .map(|r| {
                    let row = &s[r * (r + 1) / 2..];
                    let off: f64 = (0..r).map(|c| row[c] * u[c]).sum();
                    mean[r] + off + softplus(row[r]) * u[r]
                })
                .collect(),
        }
    }

    /// Whitened residual `y = L_k⁻¹(λ − μ_k)` and `Σ log diag(L_k)`.
    fn whiten(&self, theta: &[f64], k: usize, lambda: &[f64]) -> (Vec<f64>, f64) {
        let d = self.dim;
        let mean = self.mean(theta, k);
        let s = &theta[self.scale_offset(k)..];
        match self.covariance {
            Covariance::Diagonal => {
                let y = (0..d).map(|j| (lambda[j] - mean[j]) / s[j].exp()).collect();
                (y, s[..d].iter().sum())
            }
            Covariance::Full => {
                let mut y = vec![0.0; d];
                let mut log_diag = 0.0;
                for r in 0..d {
                    let row = &s[r * (r + 1) / 2..];
                    let mut acc = lambda[r] - mean[r];
                    for c in 0..r {
                        acc -= row[c] * y[c];
                    }
                    let diag = softplus(row[r]);
                    y[r] = acc / diag;
                    log_diag += diag.ln();
                }
                (y, log_diag)
            }
        }
    }

    pub fn component_log_density(&self, theta: &[f64], k: usize, lambda: &[f64]) -> f64 {
        let (y, log_diag) = self.whiten(theta, k, lambda);
        -0.5 * y.iter().map(|v| v * v).sum::<f64>() - log_diag - self.dim as f64 * HALF_LN_2PI
    }

    fn component_terms(&self, theta: &[f64], lambda: &[f64]) -> Vec<f64> {
        let weights_lse = log_sum_exp(&theta[..self.components]).expect("at least one component");
        (0..self.components)
            .map(|k| theta[k] - weights_lse + self.component_log_density(theta, k, lambda))
            .collect()
    }

    /// `log Σ_k π_k N(λ; μ_k, L_k L_kᵀ)`.
    pub fn log_density(&self, theta: &[f64], lambda: &[f64]) -> f64 {
        log_sum_exp(&self.component_terms(theta, lambda)).expect("at least one component")
    }

    /// `∇_λ log q(λ; θ)`: responsibility-weighted `−Σ_k⁻¹(λ − μ_k)`.
    pub fn grad_lambda_log_density(&self, theta: &[f64], lambda: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let terms = self.component_terms(theta, lambda);
        let total = log_sum_exp(&terms).expect("at least one component");
        let mut g = vec![0.0; d];
        for (k, t) in terms.iter().enumerate() {
            let resp = (t - total).exp();
            if resp == 0.0 {
                continue;
            }
            let (y, _) = self.whiten(theta, k, lambda);
            // back-substitution for L⁻ᵀ y
            let s = &theta[self.scale_offset(k)..];
            let mut x = vec![0.0; d];
            match self.covariance {
                Covariance::Diagonal => {
                    for j in 0..d {
                        x[j] = y[j] / s[j].exp();
                    }
                }
                Covariance::Full => {
                    for r in (0..d).rev() {
                        let mut acc = y[r];
                        for q in r + 1..d {
                            acc -= s[q * (q + 1) / 2 + r] * x[q];
                        }
                        x[r] = acc / softplus(s[r * (r + 1) / 2 + r]);
                    }
                }
            }
            for j in 0..d {
                g[j] -= resp * x[j];
            }
        }
        g
    }

    /// Adds `scale · cotangentᵀ ∂λ_k/∂θ` for branch `k` at noise `u`.
    pub(crate) fn vjp(&self, theta: &[f64], k: usize, u: &[f64], cotangent: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.dim;
        let m = self.mean_offset(k);
        let so = self.scale_offset(k);
        for j in 0..d {
            out[m + j] += scale * cotangent[j];
        }
        match self.covariance {
            Covariance::Diagonal => {
                for j in 0..d {
                    out[so + j] += scale * cotangent[j] * theta[so + j].exp() * u[j];
                }
            }
            Covariance::Full => {
                for r in 0..d {
                    let base = so + r * (r + 1) / 2;
                    for c in 0..r {
                        out[base + c] += scale * cotangent[r] * u[c];
                    }
                    out[base + r] += scale * cotangent[r] * u[r] * sigmoid(theta[base + r]);
                }
            }
        }
    }

    /// Adds the gradient of `Σ_k π_k f_k` with respect to the logits.
    pub(crate) fn logit_grad(&self, weights: &[f64], values: &[(usize, f64)], scale: f64, out: &mut [f64]) {
        let avg: f64 = values.iter().map(|&(k, f)| weights[k] * f).sum();
        for &(k, f) in values {
            out[k] += scale * weights[k] * (f - avg);
        }
    }
}
