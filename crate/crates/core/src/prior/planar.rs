//! Planar maps `v ↦ v + û tanh(wᵀv + b)`, shared by the flow prior (applied to
//! base noise) and the inverse flow of the auxiliary model (applied to λ).
//!
//! Parameters of one layer live in a block `[w (D) | u (D) | b]`.

/// Minimum value of `ûᵀw + 1` kept by the gate correction.
pub const INVERTIBILITY_MARGIN: f64 = 1e-8;

pub(crate) fn block_len(dim: usize) -> usize {
    2 * dim + 1
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Corrected gate `û` for direction `w` and raw gate `u`.
///
/// When `wᵀu` already clears `−1 + margin`, `û = u`. Otherwise `u` is moved
/// along `w` just far enough to restore the margin. The second return value is
/// the coefficient of that move (zero when inactive).
pub fn corrected_gate(w: &[f64], u: &[f64]) -> (Vec<f64>, f64) {
    let wu = dot(w, u);
    let wn = dot(w, w);
    if wu >= -1.0 + INVERTIBILITY_MARGIN || wn == 0.0 {
        return (u.to_vec(), 0.0);
    }
    let c = (-1.0 + INVERTIBILITY_MARGIN - wu) / wn;
    (u.iter().zip(w).map(|(ui, wi)| ui + c * wi).collect(), c)
}

/// One planar layer viewed as slices into a parameter block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Planar<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: f64,
}

/// Everything the backward pass needs from one forward application.
#[derive(Debug, Clone)]
pub(crate) struct PlanarStep {
    pub uhat: Vec<f64>,
    pub c: f64,
    pub t: f64,
    /// `ûᵀw`
    pub s: f64,
    /// `1 + (1 − t²) ûᵀw`, always positive.
    pub det: f64,
}

impl PlanarStep {
    pub fn log_det(&self) -> f64 {
        self.det.ln()
    }

    /// `∇_v log det` at the layer input.
    pub fn log_det_input_grad(&self, w: &[f64]) -> Vec<f64> {
        let k = -2.0 * self.t * (1.0 - self.t * self.t) * self.s / self.det;
        w.iter().map(|wi| k * wi).collect()
    }

    /// `J⁻ᵀ x` where `J = I + û ψᵀ`, `ψ = (1 − t²) w` (Sherman–Morrison).
    pub fn inverse_transpose_apply(&self, w: &[f64], x: &mut [f64]) {
        let hp = 1.0 - self.t * self.t;
        let k = dot(&self.uhat, x) / self.det;
        for (xi, wi) in x.iter_mut().zip(w) {
            *xi -= hp * wi * k;
        }
    }
}

impl<'a> Planar<'a> {
    pub fn from_block(block: &'a [f64], dim: usize) -> Self {
        Self {
            w: &block[..dim],
            u: &block[dim..2 * dim],
            b: block[2 * dim],
        }
    }

    /// Applies the layer to `v` in place and records the step.
    pub fn forward(&self, v: &mut [f64]) -> PlanarStep {
        let (uhat, c) = corrected_gate(self.w, self.u);
        let a = dot(self.w, v) + self.b;
        let t = a.tanh();
        for (vi, ui) in v.iter_mut().zip(&uhat) {
            *vi += ui * t;
        }
        let s = dot(&uhat, self.w);
        let det = 1.0 + (1.0 - t * t) * s;
        PlanarStep { uhat, c, t, s, det }
    }

    /// Reverse accumulation through one layer.
    ///
    /// Given cotangents `g_out` of the layer output and `g_ld` of its log
    /// determinant, overwrites `g_out` with the cotangent of the input `v_in`
    /// and adds parameter cotangents into `g_block` (layout `[w | u | b]`).
    pub fn backward(
        &self,
        step: &PlanarStep,
        v_in: &[f64],
        g_out: &mut [f64],
        g_ld: f64,
        g_block: &mut [f64],
    ) {
        let dim = v_in.len();
        let (gw, rest) = g_block.split_at_mut(dim);
        let (gu, gb) = rest.split_at_mut(dim);
        let t = step.t;
        let hp = 1.0 - t * t;

        let mut g_uhat: Vec<f64> = g_out.iter().map(|g| g * t).collect();
        let mut g_t = dot(g_out, &step.uhat);
        g_t += g_ld * (-2.0 * t * step.s / step.det);
        let g_s = g_ld * hp / step.det;
        for j in 0..dim {
            g_uhat[j] += g_s * self.w[j];
            gw[j] += g_s * step.uhat[j];
        }
        let g_a = g_t * hp;
        for j in 0..dim {
            g_out[j] += g_a * self.w[j];
            gw[j] += g_a * v_in[j];
        }
        gb[0] += g_a;

        if step.c == 0.0 {
            for j in 0..dim {
                gu[j] += g_uhat[j];
            }
        } else {
            let wn = dot(self.w, self.w);
            let gw_dot = dot(&g_uhat, self.w);
            for j in 0..dim {
                gu[j] += g_uhat[j] - gw_dot * self.w[j] / wn;
                gw[j] += step.c * g_uhat[j]
                    + gw_dot * (-self.u[j] / wn - 2.0 * step.c * self.w[j] / wn);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_layer_example() {
        let block = [1.0, 0.5, 0.0];
        let layer = Planar::from_block(&block, 1);
        let mut v = [1.0];
        let step = layer.forward(&mut v);
        assert!((v[0] - 1.380_797_077_977_882_4).abs() < 1e-14);
        assert!((step.log_det() - 0.190_609_756_913_609_14).abs() < 1e-14);
        assert_eq!(step.c, 0.0);
    }

    #[test]
    fn gate_correction_restores_margin() {
        let (uhat, c) = corrected_gate(&[1.0, 2.0], &[-3.0, -1.0]);
        assert!(c > 0.0);
        assert!((dot(&uhat, &[1.0, 2.0]) - (-1.0 + INVERTIBILITY_MARGIN)).abs() < 1e-12);
        let (same, c0) = corrected_gate(&[1.0], &[0.5]);
        assert_eq!(same, vec![0.5]);
        assert_eq!(c0, 0.0);
    }

    fn scalar_objective(block: &[f64], v: &[f64], g_out: &[f64], g_ld: f64) -> f64 {
        let dim = v.len();
        let mut x = v.to_vec();
        let step = Planar::from_block(block, dim).forward(&mut x);
        dot(&x, g_out) + g_ld * step.log_det()
    }

    #[test]
    fn backward_matches_finite_differences() {
        // one configuration with an active gate correction, one without
        let cases: [(&[f64], &[f64]); 2] = [
            (&[0.7, -0.4, 0.3, 0.2, 0.1], &[0.5, -1.2]),
            (&[1.5, 0.8, -2.0, -1.5, -0.3], &[0.2, 0.4]),
        ];
        let g_out = [0.6, -1.1];
        let g_ld = 0.8;
        for (block, v) in cases {
            let layer = Planar::from_block(block, 2);
            let mut x = v.to_vec();
            let step = layer.forward(&mut x);
            let mut g = g_out.to_vec();
            let mut g_block = vec![0.0; 5];
            layer.backward(&step, v, &mut g, g_ld, &mut g_block);
            let h = 1e-6;
            for j in 0..5 {
                let mut p = block.to_vec();
                let mut m = block.to_vec();
                p[j] += h;
                m[j] -= h;
                let fd = (scalar_objective(&p, v, &g_out, g_ld) - scalar_objective(&m, v, &g_out, g_ld))
                    / (2.0 * h);
                assert!((fd - g_block[j]).abs() < 1e-7, "param {j}: {fd} vs {}", g_block[j]);
            }
            for j in 0..2 {
                let mut p = v.to_vec();
                let mut m = v.to_vec();
                p[j] += h;
                m[j] -= h;
                let fd = (scalar_objective(block, &p, &g_out, g_ld) - scalar_objective(block, &m, &g_out, g_ld))
                    / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn determinant_stays_positive(
            w in prop::collection::vec(-5.0f64..5.0, 3),
            u in prop::collection::vec(-5.0f64..5.0, 3),
            b in -3.0f64..3.0,
            v in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            let mut block = w.clone();
            block.extend(&u);
            block.push(b);
            let mut x = v.clone();
            let step = Planar::from_block(&block, 3).forward(&mut x);
            prop_assert!(step.det > 0.0);
            prop_assert!(step.s >= -1.0 + INVERTIBILITY_MARGIN - 1e-12);
        }
    }
}
