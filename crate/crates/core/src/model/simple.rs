use super::{check_index, check_latents, TargetModel};
use crate::error::{invalid, Result};
use crate::stats::{FactorSpec, HALF_LN_2PI};

/// Binary latents with an explicit (unnormalized) log-mass table.
///
/// State `s` encodes `z_i = (s >> i) & 1`. Every coordinate touches the whole
/// table, so blankets are the full joint.
#[derive(Debug, Clone)]
pub struct BernoulliTable {
    log_weights: Vec<f64>,
    specs: Vec<FactorSpec>,
}

impl BernoulliTable {
    pub fn new(d: usize, log_weights: Vec<f64>) -> Result<Self> {
        if d == 0 || d > 20 {
            return Err(invalid("table targets support 1..=20 binary latents"));
        }
        if log_weights.len() != 1 << d {
            return Err(invalid(format!(
                "expected {} log weights, got {}",
                1usize << d,
                log_weights.len()
            )));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(invalid("log weights must be finite or -inf"));
        }
        Ok(Self {
            log_weights,
            specs: vec![FactorSpec::bernoulli(); d],
        })
    }

    /// Single binary latent with `p(z = 1) = p1`.
    pub fn single(p1: f64) -> Result<Self> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(invalid("probability must lie in (0, 1)"));
        }
        Self::new(1, vec![(1.0 - p1).ln(), p1.ln()])
    }

    /// Two correlated binary latents, unnormalized masses (1, 4, 4, 2)
    /// over states (00, 10, 01, 11).
    pub fn coupled_pair() -> Self {
        Self::new(2, vec![0.0, 4f64.ln(), 4f64.ln(), 2f64.ln()]).expect("valid table")
    }

    fn state(z: &[f64]) -> usize {
        z.iter()
            .enumerate()
            .map(|(i, &v)| (v as usize) << i)
            .sum()
    }
}

impl TargetModel for BernoulliTable {
    fn factor_specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_latents(&self.specs, z)?;
        Ok(self.log_weights[Self::state(z)])
    }

    fn log_blanket(&self, i: usize, z: &[f64]) -> Result<f64> {
        check_index(self.specs.len(), i)?;
        self.log_joint(z)
    }
}

/// Binary chain `Σ h_i z_i + Σ J_i z_i z_{i+1}`; each blanket touches at most
/// three terms, so blanket cost is constant in `d`.
#[derive(Debug, Clone)]
pub struct BernoulliChain {
    fields: Vec<f64>,
    couplings: Vec<f64>,
    specs: Vec<FactorSpec>,
}

impl BernoulliChain {
    pub fn new(fields: Vec<f64>, couplings: Vec<f64>) -> Result<Self> {
        if fields.is_empty() || couplings.len() + 1 != fields.len() {
            return Err(invalid("a chain of d units needs d fields and d-1 couplings"));
        }
        if fields.iter().chain(&couplings).any(|v| !v.is_finite()) {
            return Err(invalid("chain parameters must be finite"));
        }
        let d = fields.len();
        Ok(Self {
            fields,
            couplings,
            specs: vec![FactorSpec::bernoulli(); d],
        })
    }

    /// Alternating fields and couplings, for scaling studies.
    pub fn alternating(d: usize) -> Result<Self> {
        let fields = (0..d).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let couplings = (0..d.saturating_sub(1))
            .map(|i| if i % 3 == 0 { 1.0 } else { -0.75 })
            .collect();
        Self::new(fields, couplings)
    }
}

impl TargetModel for BernoulliChain {
    fn factor_specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_latents(&self.specs, z)?;
        let unary: f64 = self.fields.iter().zip(z).map(|(h, v)| h * v).sum();
        let pair: f64 = self
            .couplings
            .iter()
            .enumerate()
            .map(|(i, j)| j * z[i] * z[i + 1])
            .sum();
        Ok(unary + pair)
    }

    fn log_blanket(&self, i: usize, z: &[f64]) -> Result<f64> {
        let d = self.specs.len();
        check_index(d, i)?;
        if z.len() != d {
            return Err(invalid(format!("expected {d} latent values")));
        }
        for j in i.saturating_sub(1)..(i + 2).min(d) {
            self.specs[j].check_support(z[j])?;
        }
        let mut v = self.fields[i] * z[i];
        if i > 0 {
            v += self.couplings[i - 1] * z[i - 1] * z[i];
        }
        if i + 1 < d {
            v += self.couplings[i] * z[i] * z[i + 1];
        }
        Ok(v)
    }
}

/// One Gaussian latent with density `N(mean, sd²)`, used to compare score and
/// reparameterization gradients.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: f64,
    sd: f64,
    specs: [FactorSpec; 1],
}

impl GaussianTarget {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(invalid("Gaussian target needs finite mean and positive sd"));
        }
        Ok(Self {
            mean,
            sd,
            specs: [FactorSpec::gaussian()],
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }
}

impl TargetModel for GaussianTarget {
    fn factor_specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_latents(&self.specs, z)?;
        let r = (z[0] - self.mean) / self.sd;
        Ok(-0.5 * r * r - self.sd.ln() - HALF_LN_2PI)
    }

    fn log_blanket(&self, i: usize, z: &[f64]) -> Result<f64> {
        check_index(1, i)?;
        self.log_joint(z)
    }

    fn grad_log_joint(&self, z: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(check_latents(&self.specs, z).map(|_| vec![-(z[0] - self.mean) / (self.sd * self.sd)]))
    }
}
