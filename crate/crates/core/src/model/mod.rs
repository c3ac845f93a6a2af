//! Target models: the unnormalized log posterior `log p(x, z)` together with
//! its per-variable Markov-blanket decomposition.

mod def;
mod poisson2d;
mod simple;

pub use def::{DefKind, DefModel};
pub use poisson2d::Poisson2DTarget;
pub use simple::{BernoulliChain, BernoulliTable, GaussianTarget};

use crate::error::{invalid, Result};
use crate::stats::FactorSpec;

/// A black-box posterior over `d` latent variables.
///
/// Implementations must be immutable once built; evaluation happens from many
/// threads at once.
pub trait TargetModel: Send + Sync {
    /// Support of each latent coordinate, which also fixes the mean-field family.
    fn factor_specs(&self) -> &[FactorSpec];

    /// Unnormalized log posterior at `z`.
    fn log_joint(&self, z: &[f64]) -> Result<f64>;

    /// Sum of exactly the joint-density terms that contain `z_i`.
    fn log_blanket(&self, i: usize, z: &[f64]) -> Result<f64>;

    fn dim(&self) -> usize {
        self.factor_specs().len()
    }

    /// `∇_z log p(x, z)` for models with differentiable densities.
    fn grad_log_joint(&self, _z: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

/// Validates shape and support of `z` for `model`.
pub fn check_latents(specs: &[FactorSpec], z: &[f64]) -> Result<()> {
    if z.len() != specs.len() {
        return Err(invalid(format!(
            "expected {} latent values, got {}",
            specs.len(),
            z.len()
        )));
    }
    for (spec, &zi) in specs.iter().zip(z) {
        spec.check_support(zi)?;
    }
    Ok(())
}

pub(crate) fn check_index(d: usize, i: usize) -> Result<()> {
    if i >= d {
        Err(invalid(format!("latent index {i} out of range for d = {d}")))
    } else {
        Ok(())
    }
}
