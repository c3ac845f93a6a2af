use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_index, check_latents, TargetModel};
use crate::error::{invalid, Result};
use crate::stats::{ln_factorial, log_softplus, sample_poisson, sigmoid, softplus, FactorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefKind {
    /// Sigmoid belief network: binary units with logistic conditionals.
    Bernoulli,
    /// Poisson units with rate `softplus(zᵀW + b)`.
    Poisson,
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Obs(usize),
    Unit(usize),
}

/// Layered deep exponential family with fixed weights and observed counts.
///
/// `layer_sizes` runs from the layer adjacent to the data up to the top layer.
/// `weights[0]` is the `n_obs × size₁` observation matrix and `weights[ℓ]`
/// (ℓ ≥ 1) is `sizeₗ × sizeₗ₊₁`. `biases[0]` belongs to the observations and
/// `biases[ℓ]` to layer ℓ; the top layer's bias is its prior natural
/// parameter. Observations are `x_j ~ Poisson(softplus(W₀ z₁ + b₀)_j)`.
///
/// Latents are flattened layer by layer starting at the bottom.
#[derive(Debug, Clone)]
pub struct DefModel {
    kind: DefKind,
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    observations: Vec<f64>,
    offsets: Vec<usize>,
    unit_layer: Vec<usize>,
    blankets: Vec<Vec<Term>>,
    specs: Vec<FactorSpec>,
}

impl DefModel {
    pub fn new(
        kind: DefKind,
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
        observations: Vec<f64>,
    ) -> Result<Self> {
        let depth = layer_sizes.len();
        if depth == 0 || layer_sizes.contains(&0) {
            return Err(invalid("layer sizes must be nonempty and positive"));
        }
        if weights.len() != depth {
            return Err(invalid(format!(
                "expected {depth} weight matrices (observation + inter-layer), got {}",
                weights.len()
            )));
        }
        if biases.len() != depth + 1 {
            return Err(invalid(format!(
                "expected {} bias vectors, got {}",
                depth + 1,
                biases.len()
            )));
        }
        let n_obs = observations.len();
        check_matrix(&weights[0], n_obs, layer_sizes[0], "W0")?;
        for l in 1..depth {
            check_matrix(&weights[l], layer_sizes[l - 1], layer_sizes[l], &format!("W{l}"))?;
        }
        if biases[0].len() != n_obs {
            return Err(invalid("observation bias length must equal observation count"));
        }
        for l in 1..=depth {
            if biases[l].len() != layer_sizes[l - 1] {
                return Err(invalid(format!("bias {l} has wrong length")));
            }
        }
        if observations
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0 && x.fract() == 0.0))
        {
            return Err(invalid("observations must be nonnegative counts"));
        }
        if weights
            .iter()
            .flatten()
            .flatten()
            .chain(biases.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(invalid("weights and biases must be finite"));
        }

        let mut offsets = Vec::with_capacity(depth + 1);
        let mut acc = 0;
        for &s in &layer_sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        let d = acc;
        let mut unit_layer = Vec::with_capacity(d);
        for (l, &s) in layer_sizes.iter().enumerate() {
            unit_layer.extend(std::iter::repeat_n(l, s));
        }

        let mut blankets = vec![Vec::new(); d];
        for (idx, blanket) in blankets.iter_mut().enumerate() {
            let l = unit_layer[idx];
            let k = idx - offsets[l];
            blanket.push(Term::Unit(idx));
            if l == 0 {
                for j in 0..n_obs {
                    if weights[0][j][k] != 0.0 {
                        blanket.push(Term::Obs(j));
                    }
                }
            } else {
                for c in 0..layer_sizes[l - 1] {
                    if weights[l][c][k] != 0.0 {
                        blanket.push(Term::Unit(offsets[l - 1] + c));
                    }
                }
            }
        }

        let spec = match kind {
            DefKind::Bernoulli => FactorSpec::bernoulli(),
            DefKind::Poisson => FactorSpec::poisson(),
        };
        Ok(Self {
            kind,
            layer_sizes,
            weights,
            biases,
            observations,
            offsets,
            unit_layer,
            blankets,
            specs: vec![spec; d],
        })
    }

    /// Sigmoid belief network over binary latents.
    pub fn toy_sbn(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
        observations: Vec<f64>,
    ) -> Result<Self> {
        Self::new(DefKind::Bernoulli, layer_sizes, weights, biases, observations)
    }

    /// Poisson DEF over count latents.
    pub fn toy_poisson_def(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
        observations: Vec<f64>,
    ) -> Result<Self> {
        Self::new(DefKind::Poisson, layer_sizes, weights, biases, observations)
    }

    /// Gaussian weights drawn from `N(0, weight_scale²)`, constant biases, and
    /// observations simulated from the model by ancestral sampling.
    pub fn synthetic(
        kind: DefKind,
        layer_sizes: Vec<usize>,
        n_obs: usize,
        weight_scale: f64,
        latent_bias: f64,
        obs_bias: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(weight_scale.is_finite() && weight_scale >= 0.0) {
            return Err(invalid("weight scale must be nonnegative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, weight_scale).map_err(|e| invalid(e.to_string()))?;
        let depth = layer_sizes.len();
        if depth == 0 {
            return Err(invalid("layer sizes must be nonempty"));
        }
        let mut weights = Vec::with_capacity(depth);
        let draw = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| (0..cols).map(|_| normal.sample(rng)).collect())
                .collect()
        };
        weights.push(draw(n_obs, layer_sizes[0], &mut rng));
        for l in 1..depth {
            weights.push(draw(layer_sizes[l - 1], layer_sizes[l], &mut rng));
        }
        let mut biases = vec![vec![obs_bias; n_obs]];
        for &s in &layer_sizes {
            biases.push(vec![latent_bias; s]);
        }

        // ancestral pass from the top layer down to the observations
        let mut layers: Vec<Vec<f64>> = vec![Vec::new(); depth];
        for l in (0..depth).rev() {
            let vals = (0..layer_sizes[l])
                .map(|k| {
                    let mut eta = biases[l + 1][k];
                    if l + 1 < depth {
                        eta += dot(&weights[l + 1][k], &layers[l + 1]);
                    }
                    match kind {
                        DefKind::Bernoulli => f64::from(u8::from(rng.random::<f64>() < sigmoid(eta))),
                        DefKind::Poisson => sample_poisson(softplus(eta), &mut rng),
                    }
                })
                .collect();
            layers[l] = vals;
        }
        let observations = (0..n_obs)
            .map(|j| sample_poisson(softplus(obs_bias + dot(&weights[0][j], &layers[0])), &mut rng))
            .collect();
        Self::new(kind, layer_sizes, weights, biases, observations)
    }

    pub fn kind(&self) -> DefKind {
        self.kind
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn weights(&self) -> &[Vec<Vec<f64>>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    fn layer_values<'a>(&self, z: &'a [f64], l: usize) -> &'a [f64] {
        &z[self.offsets[l]..self.offsets[l + 1]]
    }

    fn term(&self, t: Term, z: &[f64]) -> f64 {
        match t {
            Term::Obs(j) => {
                let eta = self.biases[0][j] + dot(&self.weights[0][j], self.layer_values(z, 0));
                log_pois_softplus(self.observations[j], eta)
            }
            Term::Unit(idx) => {
                let l = self.unit_layer[idx];
                let k = idx - self.offsets[l];
                let mut eta = self.biases[l + 1][k];
                if l + 1 < self.layer_sizes.len() {
                    eta += dot(&self.weights[l + 1][k], self.layer_values(z, l + 1));
                }
                match self.kind {
                    DefKind::Bernoulli => z[idx] * eta - softplus(eta),
                    DefKind::Poisson => log_pois_softplus(z[idx], eta),
                }
            }
        }
    }
}

fn check_matrix(m: &[Vec<f64>], rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(invalid(format!("{name} must be {rows}×{cols}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_pois_softplus(x: f64, eta: f64) -> f64 {
    x * log_softplus(eta) - softplus(eta) - ln_factorial(x)
}

impl TargetModel for DefModel {
    fn factor_specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_latents(&self.specs, z)?;
        let units: f64 = (0..z.len()).map(|i| self.term(Term::Unit(i), z)).sum();
        let obs: f64 = (0..self.observations.len())
            .map(|j| self.term(Term::Obs(j), z))
            .sum();
        Ok(units + obs)
    }

    fn log_blanket(&self, i: usize, z: &[f64]) -> Result<f64> {
        check_index(self.specs.len(), i)?;
        check_latents(&self.specs, z)?;
        Ok(self.blankets[i].iter().map(|&t| self.term(t, z)).sum())
    }
}
