//! The factorized variational likelihood `q(z | λ) = Π_i q(z_i | λ_i)`.

use std::ops::Range;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::estimate::{map_samples, GradientEstimate, ScalarEstimate};
use crate::model::{check_latents, TargetModel};
use crate::stats::{log_density_and_score_unchecked, log_density_unchecked, sample_unchecked, FactorSpec};

/// Layout of the flat parameter vector λ over the latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    specs: Vec<FactorSpec>,
    offsets: Vec<usize>,
}

impl MeanField {
    pub fn new(specs: Vec<FactorSpec>) -> Self {
        let mut offsets = Vec::with_capacity(specs.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for s in &specs {
            acc += s.param_dim();
            offsets.push(acc);
        }
        Self { specs, offsets }
    }

    pub fn for_model(model: &dyn TargetModel) -> Self {
        Self::new(model.factor_specs().to_vec())
    }

    pub fn specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    /// Number of latent variables `d`.
    pub fn num_factors(&self) -> usize {
        self.specs.len()
    }

    /// Length `D` of λ.
    pub fn param_dim(&self) -> usize {
        self.offsets[self.specs.len()]
    }

    pub fn slice(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Factor owning coordinate `j` of λ.
    pub fn factor_of(&self, j: usize) -> usize {
        self.offsets.partition_point(|&o| o <= j) - 1
    }

    pub fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.param_dim() {
            return Err(invalid(format!(
                "expected {} mean-field parameters, got {}",
                self.param_dim(),
                lambda.len()
            )));
        }
        if let Some(j) = lambda.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("mean-field parameter {j} is not finite")));
        }
        Ok(())
    }

    pub fn sample_z<R: Rng + ?Sized>(&self, lambda: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        Ok(self.sample_unchecked(lambda, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, lambda: &[f64], rng: &mut R) -> Vec<f64> {
        self.specs
            .iter()
            .enumerate()
            .map(|(i, s)| sample_unchecked(s.family(), &lambda[self.slice(i)], rng))
            .collect()
    }

    pub fn log_q(&self, lambda: &[f64], z: &[f64]) -> Result<f64> {
        self.check_lambda(lambda)?;
        check_latents(&self.specs, z)?;
        Ok((0..self.specs.len())
            .map(|i| log_density_unchecked(self.specs[i].family(), &lambda[self.slice(i)], z[i]))
            .sum())
    }

    /// Per-factor log densities into `log_qi` and scores into `scores`
    /// (laid out like λ). Returns the total.
    pub(crate) fn factor_terms(&self, lambda: &[f64], z: &[f64], log_qi: &mut [f64], scores: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (i, spec) in self.specs.iter().enumerate() {
            let r = self.slice(i);
            let lq = log_density_and_score_unchecked(spec.family(), &lambda[r.clone()], z[i], &mut scores[r]);
            log_qi[i] = lq;
            total += lq;
        }
        total
    }

    /// Adds one Rao-Blackwellized sample `Σ_i V_i (log p_i − log q_i − b_i)` to
    /// `out`, scaled by `scale`. Draws its own `z`.
    pub(crate) fn add_local_gradient_sample<R: Rng + ?Sized>(
        &self,
        model: &dyn TargetModel,
        lambda: &[f64],
        baseline: Option<&[f64]>,
        scale: f64,
        rng: &mut R,
        out: &mut [f64],
        signals: &mut [f64],
    ) -> Result<()> {
        let z = self.sample_unchecked(lambda, rng);
        let mut log_qi = vec![0.0; self.specs.len()];
        let mut scores = vec![0.0; lambda.len()];
        self.factor_terms(lambda, &z, &mut log_qi, &mut scores);
        for i in 0..self.specs.len() {
            let signal = model.log_blanket(i, &z)? - log_qi[i];
            signals[i] += scale * signal;
            let centered = signal - baseline.map_or(0.0, |b| b[i]);
            for j in self.slice(i) {
                out[j] += scale * scores[j] * centered;
            }
        }
        Ok(())
    }
}

fn require_samples(n: usize, min: usize) -> Result<()> {
    if n < min {
        Err(invalid(format!("need at least {min} samples, got {n}")))
    } else {
        Ok(())
    }
}

/// Monte Carlo estimate of `E_q[log p(x, z) − log q(z | λ)]`.
pub fn elbo_mf<R: Rng + ?Sized>(model: &dyn TargetModel, lambda: &[f64], rng: &mut R, n: usize) -> Result<ScalarEstimate> {
    require_samples(n, 1)?;
    let mf = MeanField::for_model(model);
    mf.check_lambda(lambda)?;
    let values = map_samples(n, rng, |_, r| {
        let z = mf.sample_unchecked(lambda, r);
        Ok(model.log_joint(&z)? - mf.log_q(lambda, &z)?)
    })?;
    Ok(ScalarEstimate::from_samples(&values))
}

/// Rao-Blackwellized score gradient of the mean-field ELBO: each factor's
/// score is weighted only by its own Markov-blanket signal.
pub fn grad_lambda_mf<R: Rng + ?Sized>(
    model: &dyn TargetModel,
    lambda: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<GradientEstimate> {
    require_samples(n, 2)?;
    let mf = MeanField::for_model(model);
    mf.check_lambda(lambda)?;
    let samples = map_samples(n, rng, |_, r| {
        let mut g = vec![0.0; lambda.len()];
        let mut signals = vec![0.0; mf.num_factors()];
        mf.add_local_gradient_sample(model, lambda, None, 1.0, r, &mut g, &mut signals)?;
        Ok(g)
    })?;
    Ok(GradientEstimate::from_samples(&samples))
}
