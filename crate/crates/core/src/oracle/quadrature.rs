//! Gauss–Hermite rules for expectations under N(0, 1).

use crate::error::{invalid, Error, Result};

/// Nodes and weights with `Σ w f(x) ≈ E[f(X)]`, `X ~ N(0, 1)`.
///
/// Roots of the physicists' Hermite polynomial are found by Newton iteration
/// on the orthonormal recurrence, then rescaled by √2 with weights divided by √π.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 200 {
        return Err(invalid(format!("unsupported Gauss–Hermite order {n}")));
    }
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut done = false;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Domain(format!("Gauss–Hermite root {i} of order {n} did not converge")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nodes = x.iter().rev().map(|t| std::f64::consts::SQRT_2 * t).collect();
    let weights = w.iter().rev().map(|v| v / sqrt_pi).collect();
    Ok((nodes, weights))
}

/// Tensor-product rule in `dim` dimensions, visited in row-major order.
pub(crate) struct TensorRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
    len: usize,
}

impl TensorRule {
    pub(crate) fn new(order: usize, dim: usize, max_points: usize) -> Result<Self> {
        let len = (order as f64).powi(dim as i32);
        if len > max_points as f64 {
            return Err(Error::Resource(format!(
                "{order}^{dim} quadrature points exceed the limit of {max_points}"
            )));
        }
        let (nodes, weights) = gauss_hermite(order)?;
        Ok(Self {
            nodes,
            weights,
            dim,
            len: len as usize,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    /// Writes point `idx` into `x` and returns its weight.
    pub(crate) fn point(&self, mut idx: usize, x: &mut [f64]) -> f64 {
        let n = self.nodes.len();
        let mut w = 1.0;
        for j in (0..self.dim).rev() {
            let a = idx % n;
            idx /= n;
            x[j] = self.nodes[a];
            w *= self.weights[a];
        }
        w
    }
}
