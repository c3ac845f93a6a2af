//! Monte Carlo estimates and the deterministic map-reduce over samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Mean and standard error of a scalar Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl ScalarEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n >= 2 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error, n }
    }
}

/// Per-coordinate mean and standard error of a vector-valued estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n: usize,
}

impl GradientEstimate {
    /// Summarizes per-sample vectors, which must all share one length.
    pub fn from_samples(samples: &[Vec<f64>]) -> Self {
        let n = samples.len();
        let p = samples.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; p];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut std_error = vec![0.0; p];
        if n >= 2 {
            for s in samples {
                for ((e, v), m) in std_error.iter_mut().zip(s).zip(&mean) {
                    *e += (v - m) * (v - m);
                }
            }
            for e in &mut std_error {
                *e = (*e / (n - 1) as f64 / n as f64).sqrt();
            }
        }
        Self { mean, std_error, n }
    }

    /// Per-coordinate sample variance of a single draw (`SE² · n`).
    pub fn sample_variance(&self) -> Vec<f64> {
        self.std_error
            .iter()
            .map(|se| se * se * self.n as f64)
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Runs `f` once per sample index with its own generator and returns results
/// in index order.
///
/// One seed is drawn from `rng`; sample `i` uses stream `i` of that seed, so
/// the output does not depend on how many worker threads execute the map.
pub(crate) fn map_samples<T, F, R>(n: usize, rng: &mut R, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
    R: Rng + ?Sized,
{
    let seed: u64 = rng.random();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            f(i, &mut r)
        })
        .collect()
}
