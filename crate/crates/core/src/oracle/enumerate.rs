//! Exact pmfs over truncated discrete grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::TargetModel;
use crate::stats::{log_density, log_sum_exp, Family, FactorSpec};

/// Largest grid any oracle will enumerate.
pub const MAX_STATES: usize = 10_000_000;

/// Normalized pmf on the cartesian product of `axes`, stored row-major with
/// the last coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedPmf {
    axes: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    log_z: f64,
}

/// Support values per coordinate: `{0, 1}` for binary factors, `0..=cap` for counts.
pub fn grid_axes(specs: &[FactorSpec], cap: usize) -> Result<Vec<Vec<f64>>> {
    let axes: Vec<Vec<f64>> = specs
        .iter()
        .map(|s| match s.family() {
            Family::Bernoulli => Ok(vec![0.0, 1.0]),
            Family::Poisson => Ok((0..=cap).map(|k| k as f64).collect()),
            _ => Err(Error::Unsupported(format!("cannot enumerate a {} latent", s.name()))),
        })
        .collect::<Result<_>>()?;
    let states = axes.iter().fold(1f64, |acc, a| acc * a.len() as f64);
    if states > MAX_STATES as f64 {
        return Err(Error::Resource(format!(
            "{states} states exceed the enumeration limit of {MAX_STATES}"
        )));
    }
    Ok(axes)
}

impl EnumeratedPmf {
    /// Builds from unnormalized log weights; `log_z` is their log-sum-exp.
    pub fn from_log_weights(axes: Vec<Vec<f64>>, log_weights: Vec<f64>) -> Result<Self> {
        let states: usize = axes.iter().map(Vec::len).product();
        if states != log_weights.len() {
            return Err(invalid(format!(
                "grid has {states} states but {} weights were given",
                log_weights.len()
            )));
        }
        let log_z = log_sum_exp(&log_weights)?;
        if !log_z.is_finite() {
            return Err(Error::Domain("pmf has no finite mass".into()));
        }
        Ok(Self {
            axes,
            log_weights,
            log_z,
        })
    }

    /// Builds from nonnegative unnormalized masses.
    pub fn from_masses(axes: Vec<Vec<f64>>, masses: &[f64]) -> Result<Self> {
        Self::from_log_weights(axes, masses.iter().map(|m| m.ln()).collect())
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut z = vec![0.0; self.axes.len()];
        for j in (0..self.axes.len()).rev() {
            let n = self.axes[j].len();
            z[j] = self.axes[j][idx % n];
            idx /= n;
        }
        z
    }

    pub fn support(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn log_prob(&self, idx: usize) -> f64 {
        self.log_weights[idx] - self.log_z
    }

    pub fn prob(&self, idx: usize) -> f64 {
        self.log_prob(idx).exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.prob(i)).collect()
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.axes == other.axes
    }

    /// Marginal pmf of coordinate `i` over its axis.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes[i].len()];
        let inner: usize = self.axes[i + 1..].iter().map(Vec::len).product();
        let n = self.axes[i].len();
        for idx in 0..self.len() {
            out[(idx / inner) % n] += self.prob(idx);
        }
        out
    }

    /// `E[z]` per coordinate.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.marginal(i).iter().zip(&self.axes[i]).map(|(p, z)| p * z).sum())
            .collect()
    }

    /// Pearson correlation of the first two coordinates.
    pub fn correlation(&self) -> Result<f64> {
        if self.dim() < 2 {
            return Err(invalid("correlation needs two coordinates"));
        }
        let m = self.mean();
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for idx in 0..self.len() {
            let z = self.point(idx);
            let p = self.prob(idx);
            let (dx, dy) = (z[0] - m[0], z[1] - m[1]);
            sxy += p * dx * dy;
            sxx += p * dx * dx;
            syy += p * dy * dy;
        }
        Ok(sxy / (sxx * syy).sqrt())
    }
}

/// Exact posterior of `model` on its grid truncated at `cap` per count coordinate.
pub fn enumerate_target(model: &dyn TargetModel, cap: usize) -> Result<EnumeratedPmf> {
    let axes = grid_axes(model.factor_specs(), cap)?;
    let states: usize = axes.iter().map(Vec::len).product();
    let shell = EnumeratedPmf {
        axes,
        log_weights: Vec::new(),
        log_z: 0.0,
    };
    let log_weights = (0..states)
        .into_par_iter()
        .map(|i| model.log_joint(&shell.point(i)))
        .collect::<Result<Vec<_>>>()?;
    EnumeratedPmf::from_log_weights(shell.axes, log_weights)
}

/// Per-factor probability tables `q(z_i = a | λ_i)` over each axis.
pub(crate) fn factor_tables(specs: &[FactorSpec], lambda: &[f64], axes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut off = 0;
    specs
        .iter()
        .zip(axes)
        .map(|(s, axis)| {
            let l = &lambda[off..off + s.param_dim()];
            off += s.param_dim();
            axis.iter().map(|&z| log_density(*s, l, z).map(f64::exp)).collect()
        })
        .collect()
}

/// Adds `weight · Π_i table_i` into `out` (row-major). `buf` is scratch space.
pub(crate) fn add_outer_product(tables: &[Vec<f64>], weight: f64, out: &mut [f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.push(weight);
    let mut next = Vec::with_capacity(out.len());
    for t in tables {
        next.clear();
        for &a in buf.iter() {
            next.extend(t.iter().map(|p| a * p));
        }
        std::mem::swap(buf, &mut next);
    }
    for (o, v) in out.iter_mut().zip(buf.iter()) {
        *o += v;
    }
}

pub(crate) fn outer_product(tables: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; tables.iter().map(Vec::len).product()];
    add_outer_product(tables, 1.0, &mut out, &mut Vec::new());
    out
}

/// Mean-field pmf `Π q(z_i | λ_i)` on the truncated grid.
pub fn meanfield_pmf(specs: &[FactorSpec], lambda: &[f64], cap: usize) -> Result<EnumeratedPmf> {
    let expected: usize = specs.iter().map(|s| s.param_dim()).sum();
    if lambda.len() != expected {
        return Err(invalid(format!("expected {expected} parameters, got {}", lambda.len())));
    }
    let axes = grid_axes(specs, cap)?;
    let tables = factor_tables(specs, lambda, &axes)?;
    EnumeratedPmf::from_masses(axes, &outer_product(&tables))
}

/// `KL(q ‖ p) = Σ q (log q − log p)` with `0 · log 0 = 0`.
pub fn exact_kl(q: &EnumeratedPmf, p: &EnumeratedPmf) -> Result<f64> {
    if !q.same_support(p) {
        return Err(invalid("KL needs pmfs on identical supports"));
    }
    let mut kl = 0.0;
    for i in 0..q.len() {
        let lq = q.log_prob(i);
        if lq == f64::NEG_INFINITY {
            continue;
        }
        kl += lq.exp() * (lq - p.log_prob(i));
    }
    Ok(kl)
}

/// Marginal ELBO `Σ q(z)(log p̃(z) − log q(z))` against the unnormalized target.
pub fn marginal_elbo(q: &EnumeratedPmf, target: &EnumeratedPmf) -> Result<f64> {
    Ok(target.log_z() - exact_kl(q, target)?)
}
