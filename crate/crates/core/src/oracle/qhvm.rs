//! The HVM marginal `q_hvm(z) = E_ε[Π_i q(z_i | λ_i(ε))]` and the hierarchical
//! ELBO, integrated over the prior's Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::enumerate::{add_outer_product, enumerate_target, factor_tables, grid_axes, meanfield_pmf, outer_product, EnumeratedPmf};
use super::quadrature::TensorRule;
use crate::auxiliary::Auxiliary;
use crate::error::{invalid, Result};
use crate::estimators::Hierarchical;
use crate::prior::{Prior, PriorNoise};
use crate::stats::FactorSpec;

/// Default Gauss–Hermite order per noise dimension.
pub const DEFAULT_NODES: usize = 40;

const MAX_NODES: usize = 10_000_000;
const CHUNK: usize = 256;
const MC_BLOCK: usize = 1024;

/// Noise for a standard-normal point `x`: all components of a mixture, or a
/// flow's base draw.
fn noise_at(prior: &Prior, x: &[f64]) -> PriorNoise {
    match prior {
        Prior::PointMass { .. } => PriorNoise::None,
        Prior::Mixture(_) => PriorNoise::Mixture {
            component: None,
            u: x.to_vec(),
        },
        Prior::Flow(_) => PriorNoise::Flow { eps: x.to_vec() },
    }
}

fn check(prior: &Prior, theta: &[f64], specs: &[FactorSpec]) -> Result<()> {
    prior.check_theta(theta)?;
    let d: usize = specs.iter().map(|s| s.param_dim()).sum();
    if prior.dim() != d {
        return Err(invalid(format!(
            "prior dimension {} does not match the {d} mean-field parameters",
            prior.dim()
        )));
    }
    Ok(())
}

/// Tensor Gauss–Hermite `q_hvm` with `nodes` points per noise dimension.
///
/// Works for any prior whose noise is standard normal: mixtures integrate
/// each component over the shared `u`, flows over their base draw.
pub fn qhvm_marginal(
    prior: &Prior,
    theta: &[f64],
    specs: &[FactorSpec],
    cap: usize,
    nodes: usize,
) -> Result<EnumeratedPmf> {
    check(prior, theta, specs)?;
    if let Prior::PointMass { .. } = prior {
        return meanfield_pmf(specs, theta, cap);
    }
    let axes = grid_axes(specs, cap)?;
    let states: usize = axes.iter().map(Vec::len).product();
    let rule = TensorRule::new(nodes, prior.dim(), MAX_NODES)?;
    let chunks = rule.len().div_ceil(CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<f64>> {
            let mut out = vec![0.0; states];
            let mut buf = Vec::new();
            let mut x = vec![0.0; prior.dim()];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(rule.len()) {
                let w = rule.point(idx, &mut x);
                for b in prior.branches(theta, &noise_at(prior, &x))? {
                    if b.weight > 0.0 {
                        let tables = factor_tables(specs, &b.lambda, &axes)?;
                        add_outer_product(&tables, w * b.weight, &mut out, &mut buf);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; states];
    for p in &partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    EnumeratedPmf::from_masses(axes, &total)
}

/// Monte Carlo `q_hvm` from `n` prior draws, with the standard error of each
/// state's probability.
///
/// Draws are split into fixed blocks with their own generator streams, so the
/// result does not depend on the thread count.
pub fn qhvm_marginal_mc<R: Rng + ?Sized>(
    prior: &Prior,
    theta: &[f64],
    specs: &[FactorSpec],
    cap: usize,
    rng: &mut R,
    n: usize,
) -> Result<(EnumeratedPmf, Vec<f64>)> {
    check(prior, theta, specs)?;
    if n < 2 {
        return Err(invalid("need at least 2 draws"));
    }
    let axes = grid_axes(specs, cap)?;
    let states: usize = axes.iter().map(Vec::len).product();
    let seed: u64 = rng.random();
    let blocks = n.div_ceil(MC_BLOCK);
    let partial = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(b as u64);
            let mut sum = vec![0.0; states];
            let mut sum_sq = vec![0.0; states];
            let mut one = vec![0.0; states];
            let mut buf = Vec::new();
            for _ in b * MC_BLOCK..((b + 1) * MC_BLOCK).min(n) {
                let noise = prior.sample_eps(theta, false, &mut r);
                let lambda = prior.lambda_of_eps(theta, &noise)?;
                let tables = factor_tables(specs, &lambda, &axes)?;
                one.iter_mut().for_each(|v| *v = 0.0);
                add_outer_product(&tables, 1.0, &mut one, &mut buf);
                for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&one) {
                    *s += v;
                    *q += v * v;
                }
            }
            Ok((sum, sum_sq))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = vec![0.0; states];
    let mut sum_sq = vec![0.0; states];
    for (s, q) in &partial {
        for j in 0..states {
            sum[j] += s[j];
            sum_sq[j] += q[j];
        }
    }
    let nf = n as f64;
    let se = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| {
            let m = s / nf;
            ((q / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt()
        })
        .collect();
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    Ok((EnumeratedPmf::from_masses(axes, &mean)?, se))
}

/// Hierarchical ELBO by quadrature over the prior noise and exact summation
/// over `z`:
/// `E_ε Σ_b w_b Σ_z q(z|λ_b)[log p̃(z) + log r(λ_b|z) − log q(z|λ_b) − log q(λ_b; θ)]`.
pub fn hierarchical_elbo_quadrature(
    h: &Hierarchical<'_>,
    theta: &[f64],
    phi: &[f64],
    cap: usize,
    nodes: usize,
) -> Result<f64> {
    let model = h.model();
    let prior = h.prior();
    let specs = model.factor_specs();
    check(prior, theta, specs)?;
    if phi.len() != h.aux().num_params() {
        return Err(invalid("φ has the wrong length"));
    }
    let target = enumerate_target(model, cap)?;
    let axes = target.axes().to_vec();
    let points: Vec<Vec<f64>> = target.support().collect();
    let log_p = target.log_weights();

    let branch_value = |noise: &PriorNoise| -> Result<f64> {
        let mut total = 0.0;
        for b in prior.branches(theta, noise)? {
            if b.weight == 0.0 {
                continue;
            }
            let tables = factor_tables(specs, &b.lambda, &axes)?;
            let q = outer_product(&tables);
            let log_prior = match h.aux() {
                Auxiliary::Prior => 0.0,
                Auxiliary::InverseFlow(_) => prior.log_q(theta, &b)?,
            };
            let mut acc = 0.0;
            for (i, z) in points.iter().enumerate() {
                if q[i] == 0.0 {
                    continue;
                }
                let lr = match h.aux() {
                    Auxiliary::Prior => 0.0,
                    Auxiliary::InverseFlow(f) => f.log_r(phi, &b.lambda, z)? - log_prior,
                };
                acc += q[i] * (log_p[i] + lr - q[i].ln());
            }
            total += b.weight * acc;
        }
        Ok(total)
    };

    if let Prior::PointMass { .. } = prior {
        return branch_value(&PriorNoise::None);
    }
    let rule = TensorRule::new(nodes, prior.dim(), MAX_NODES)?;
    let chunks = rule.len().div_ceil(CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let mut x = vec![0.0; prior.dim()];
            let mut acc = 0.0;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(rule.len()) {
                let w = rule.point(idx, &mut x);
                acc += w * branch_value(&noise_at(prior, &x))?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partial.iter().sum())
}
