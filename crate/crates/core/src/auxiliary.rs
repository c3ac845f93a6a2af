//! Auxiliary model `r(λ | z; φ)` used to bound the entropy of the hierarchical
//! family.
//!
//! The inverse flow applies planar maps to λ, producing `λ₀`, and scores `λ₀`
//! under a factorized Gaussian whose mean and log-stddev are affine in
//! sufficient statistics of `z`. Because the maps run in the λ → λ₀
//! direction, `log r` is available at any `(λ, z)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::meanfield::MeanField;
use crate::model::check_latents;
use crate::prior::planar::{block_len, Planar, PlanarStep};
use crate::stats::{Family, FactorSpec, HALF_LN_2PI};

const POISSON_CAP: f64 = 50.0;
const GAUSSIAN_CLIP: f64 = 1e6;

/// Number of sufficient statistics a factor contributes to `r`.
pub fn stat_dim(spec: FactorSpec) -> usize {
    match spec.family() {
        Family::Bernoulli => 1,
        Family::Poisson | Family::Gaussian | Family::Gamma => 2,
    }
}

/// Bounded sufficient statistics of one latent value.
pub fn sufficient_stats(spec: FactorSpec, z: f64) -> [f64; 2] {
    match spec.family() {
        Family::Bernoulli => [z, 0.0],
        Family::Poisson => [z.min(POISSON_CAP) / 10.0, f64::from(u8::from(z == 0.0))],
        Family::Gaussian => {
            let c = z.clamp(-GAUSSIAN_CLIP, GAUSSIAN_CLIP);
            [c, c * c]
        }
        Family::Gamma => {
            let c = z.clamp(1.0 / GAUSSIAN_CLIP, GAUSSIAN_CLIP);
            [c.ln(), c]
        }
    }
}

/// Inverse-flow auxiliary model.
///
/// `φ = [layer₁ | … | layer_K | base coefficients]`. Each layer block is
/// `[w | u | b]` as in the flow prior. For every coordinate `j` of λ, owned by
/// factor `i` with `s` statistics, the base block is `[A_j (s) | c_j | B_j (s) | e_j]`:
/// mean `A_j·t(z_i) + c_j`, log-stddev `B_j·t(z_i) + e_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseFlow {
    mf: MeanField,
    layers: usize,
    coeff_offsets: Vec<usize>,
}

/// Forward quantities of one `(λ, z)` evaluation.
#[derive(Debug, Clone)]
pub(crate) struct AuxEval {
    values: Vec<Vec<f64>>,
    steps: Vec<PlanarStep>,
    stats: Vec<[f64; 2]>,
    means: Vec<f64>,
    log_sds: Vec<f64>,
    /// Base log-density of each factor: the only terms of `log r` containing `z_i`.
    pub local: Vec<f64>,
    pub log_det_total: f64,
}

impl AuxEval {
    pub fn log_r(&self) -> f64 {
        self.local.iter().sum::<f64>() + self.log_det_total
    }
}

impl InverseFlow {
    pub fn new(mf: MeanField, layers: usize) -> Self {
        let d = mf.param_dim();
        let mut coeff_offsets = Vec::with_capacity(d + 1);
        let mut acc = layers * block_len(d);
        for j in 0..d {
            coeff_offsets.push(acc);
            acc += 2 * stat_dim(mf.specs()[mf.factor_of(j)]) + 2;
        }
        coeff_offsets.push(acc);
        Self {
            mf,
            layers,
            coeff_offsets,
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn mean_field(&self) -> &MeanField {
        &self.mf
    }

    pub fn num_params(&self) -> usize {
        *self.coeff_offsets.last().expect("offsets are nonempty")
    }

    /// Offset of the base block `[A_j | c_j | B_j | e_j]` of coordinate `j`.
    pub fn coeff_offset(&self, j: usize) -> usize {
        self.coeff_offsets[j]
    }

    fn stat_len(&self, j: usize) -> usize {
        stat_dim(self.mf.specs()[self.mf.factor_of(j)])
    }

    /// Layer directions and gates `N(0, 0.01)`, everything else zero.
    pub fn init_phi<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.mf.param_dim();
        let mut phi = vec![0.0; self.num_params()];
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        for k in 0..self.layers {
            let off = k * block_len(d);
            for v in &mut phi[off..off + 2 * d] {
                *v = normal.sample(rng);
            }
        }
        phi
    }

    fn check(&self, phi: &[f64], lambda: &[f64], z: &[f64]) -> Result<()> {
        if phi.len() != self.num_params() {
            return Err(invalid(format!(
                "auxiliary model expects {} parameters, got {}",
                self.num_params(),
                phi.len()
            )));
        }
        if lambda.len() != self.mf.param_dim() || lambda.iter().any(|v| !v.is_finite()) {
            return Err(invalid("λ must be finite with the mean-field dimension"));
        }
        check_latents(self.mf.specs(), z)
    }

    fn layer<'a>(&self, phi: &'a [f64], k: usize) -> Planar<'a> {
        let d = self.mf.param_dim();
        Planar::from_block(&phi[k * block_len(d)..(k + 1) * block_len(d)], d)
    }

    pub(crate) fn eval(&self, phi: &[f64], lambda: &[f64], z: &[f64]) -> AuxEval {
        let d = self.mf.param_dim();
        let mut values = Vec::with_capacity(self.layers + 1);
        let mut steps = Vec::with_capacity(self.layers);
        let mut v = lambda.to_vec();
        values.push(v.clone());
        for k in 0..self.layers {
            steps.push(self.layer(phi, k).forward(&mut v));
            values.push(v.clone());
        }
        let log_det_total = steps.iter().map(PlanarStep::log_det).sum();
        let specs = self.mf.specs();
        let stats: Vec<[f64; 2]> = specs.iter().zip(z).map(|(s, &zi)| sufficient_stats(*s, zi)).collect();
        let mut means = vec![0.0; d];
        let mut log_sds = vec![0.0; d];
        let mut local = vec![0.0; specs.len()];
        for j in 0..d {
            let i = self.mf.factor_of(j);
            let s = self.stat_len(j);
            let o = self.coeff_offsets[j];
            let t = &stats[i][..s];
            let a = &phi[o..o + s];
            let bcoef = &phi[o + s + 1..o + 2 * s + 1];
            means[j] = a.iter().zip(t).map(|(x, y)| x * y).sum::<f64>() + phi[o + s];
            log_sds[j] = bcoef.iter().zip(t).map(|(x, y)| x * y).sum::<f64>() + phi[o + 2 * s + 1];
            let r = (v[j] - means[j]) * (-log_sds[j]).exp();
            local[i] += -0.5 * r * r - log_sds[j] - HALF_LN_2PI;
        }
        AuxEval {
            values,
            steps,
            stats,
            means,
            log_sds,
            local,
            log_det_total,
        }
    }

    /// Reverse pass of `log r`, scaled by `scale`. Either output may be skipped.
    pub(crate) fn backward(
        &self,
        phi: &[f64],
        ev: &AuxEval,
        scale: f64,
        grad_phi: Option<&mut [f64]>,
        grad_lambda: Option<&mut [f64]>,
    ) {
        let d = self.mf.param_dim();
        let lambda0 = ev.values.last().expect("path has a start");
        let mut scratch;
        let gp: &mut [f64] = match grad_phi {
            Some(g) => g,
            None => {
                scratch = vec![0.0; self.num_params()];
                &mut scratch
            }
        };
        let mut g = vec![0.0; d];
        for j in 0..d {
            let i = self.mf.factor_of(j);
            let s = self.stat_len(j);
            let o = self.coeff_offsets[j];
            let sd = ev.log_sds[j].exp();
            let r = (lambda0[j] - ev.means[j]) / sd;
            let g_mean = scale * r / sd;
            let g_log_sd = scale * (r * r - 1.0);
            g[j] = -scale * r / sd;
            for q in 0..s {
                gp[o + q] += g_mean * ev.stats[i][q];
                gp[o + s + 1 + q] += g_log_sd * ev.stats[i][q];
            }
            gp[o + s] += g_mean;
            gp[o + 2 * s + 1] += g_log_sd;
        }
        for k in (0..self.layers).rev() {
            let off = k * block_len(d);
            self.layer(phi, k).backward(
                &ev.steps[k],
                &ev.values[k],
                &mut g,
                scale,
                &mut gp[off..off + block_len(d)],
            );
        }
        if let Some(gl) = grad_lambda {
            for (o, v) in gl.iter_mut().zip(&g) {
                *o += v;
            }
        }
    }

    pub fn log_r(&self, phi: &[f64], lambda: &[f64], z: &[f64]) -> Result<f64> {
        self.check(phi, lambda, z)?;
        Ok(self.eval(phi, lambda, z).log_r())
    }

    pub fn log_r_local(&self, phi: &[f64], lambda: &[f64], z: &[f64], i: usize) -> Result<f64> {
        self.check(phi, lambda, z)?;
        if i >= self.mf.num_factors() {
            return Err(invalid(format!("factor index {i} out of range")));
        }
        Ok(self.eval(phi, lambda, z).local[i])
    }

    pub fn grad_phi_log_r(&self, phi: &[f64], lambda: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check(phi, lambda, z)?;
        let ev = self.eval(phi, lambda, z);
        let mut g = vec![0.0; self.num_params()];
        self.backward(phi, &ev, 1.0, Some(&mut g), None);
        Ok(g)
    }

    pub fn grad_lambda_log_r(&self, phi: &[f64], lambda: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check(phi, lambda, z)?;
        let ev = self.eval(phi, lambda, z);
        let mut g = vec![0.0; lambda.len()];
        self.backward(phi, &ev, 1.0, None, Some(&mut g));
        Ok(g)
    }
}

/// Choice of auxiliary model.
#[derive(Debug, Clone, PartialEq)]
pub enum Auxiliary {
    /// `r(λ | z) = q(λ; θ)`: the conditional-entropy bound. Has no parameters.
    Prior,
    InverseFlow(InverseFlow),
}

impl Auxiliary {
    pub fn num_params(&self) -> usize {
        match self {
            Auxiliary::Prior => 0,
            Auxiliary::InverseFlow(f) => f.num_params(),
        }
    }

    pub fn init_phi<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Auxiliary::Prior => Vec::new(),
            Auxiliary::InverseFlow(f) => f.init_phi(rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Auxiliary::Prior => "prior",
            Auxiliary::InverseFlow(_) => "inverse-flow",
        }
    }

    pub fn as_inverse_flow(&self) -> Result<&InverseFlow> {
        match self {
            Auxiliary::InverseFlow(f) => Ok(f),
            Auxiliary::Prior => Err(Error::Unsupported(
                "the prior-valued auxiliary model has no standalone density".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::log_std_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_ok(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()) || (a - b).abs() < 1e-8
    }

    fn mixed_mf() -> MeanField {
        MeanField::new(vec![FactorSpec::bernoulli(), FactorSpec::poisson(), FactorSpec::gaussian()])
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (InverseFlow, Vec<f64>, Vec<f64>, Vec<f64>) {
        let aux = InverseFlow::new(mixed_mf(), 3);
        let phi: Vec<f64> = (0..aux.num_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let lambda: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = vec![
            f64::from(rng.random_range(0..2u8)),
            f64::from(rng.random_range(0..8u8)),
            rng.random_range(-2.0..2.0),
        ];
        (aux, phi, lambda, z)
    }

    #[test]
    fn layout() {
        let aux = InverseFlow::new(mixed_mf(), 2);
        // 2 layers of 9, then coordinates with 1, 2, 2, 2 statistics
        assert_eq!(aux.num_params(), 18 + 4 + 6 + 6 + 6);
        assert_eq!(aux.coeff_offset(1), 22);
    }

    #[test]
    fn degenerate_model_is_standard_normal() {
        let aux = InverseFlow::new(mixed_mf(), 0);
        let phi = vec![0.0; aux.num_params()];
        let lambda = [0.4, -1.0, 2.5, 0.1];
        for z in [[0.0, 0.0, 1.5], [1.0, 7.0, -3.0]] {
            assert!((aux.log_r(&phi, &lambda, &z).unwrap() - log_std_normal(&lambda)).abs() < 1e-14);
            let g = aux.grad_lambda_log_r(&phi, &lambda, &z).unwrap();
            for (a, b) in g.iter().zip(&lambda) {
                assert!((a + b).abs() < 1e-15);
            }
        }
        let a = aux.log_r_local(&phi, &lambda, &[0.0, 0.0, 1.5], 1).unwrap();
        let b = aux.log_r_local(&phi, &lambda, &[0.0, 9.0, 1.5], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paired_point_matches_forward_flow() {
        // one layer w=1, u=0.5, b=0 applied at λ=1 reproduces the prior-side numbers
        let aux = InverseFlow::new(MeanField::new(vec![FactorSpec::bernoulli()]), 1);
        let mut phi = vec![0.0; aux.num_params()];
        phi[0] = 1.0;
        phi[1] = 0.5;
        phi[3] = 0.3;
        let ev = aux.eval(&phi, &[1.0], &[1.0]);
        assert!((ev.values[1][0] - 1.380_797_077_977_882_4).abs() < 1e-14);
        assert!((ev.log_det_total - 0.190_609_756_913_609_14).abs() < 1e-14);
        let r = ev.values[1][0] - 0.3;
        assert!((ev.local[0] - (-0.5 * r * r - HALF_LN_2PI)).abs() < 1e-14);
    }

    #[test]
    fn decomposition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (aux, phi, lambda, z) = random_case(&mut rng);
            let ev = aux.eval(&phi, &lambda, &z);
            let total: f64 = (0..3).map(|i| aux.log_r_local(&phi, &lambda, &z, i).unwrap()).sum();
            assert!((total + ev.log_det_total - aux.log_r(&phi, &lambda, &z).unwrap()).abs() < 1e-12);
            // remainder is free of z_1
            let mut z2 = z.clone();
            z2[1] += 3.0;
            let rest1 = aux.log_r(&phi, &lambda, &z).unwrap() - aux.log_r_local(&phi, &lambda, &z, 1).unwrap();
            let rest2 = aux.log_r(&phi, &lambda, &z2).unwrap() - aux.log_r_local(&phi, &lambda, &z2, 1).unwrap();
            assert!((rest1 - rest2).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..50 {
            let (aux, phi, lambda, z) = random_case(&mut rng);
            let gp = aux.grad_phi_log_r(&phi, &lambda, &z).unwrap();
            for j in 0..phi.len() {
                let mut p = phi.clone();
                let mut m = phi.clone();
                p[j] += h;
                m[j] -= h;
                let fd = (aux.log_r(&p, &lambda, &z).unwrap() - aux.log_r(&m, &lambda, &z).unwrap()) / (2.0 * h);
                assert!(rel_ok(gp[j], fd), "φ[{j}]: {} vs {fd}", gp[j]);
            }
            let gl = aux.grad_lambda_log_r(&phi, &lambda, &z).unwrap();
            for j in 0..lambda.len() {
                let mut p = lambda.clone();
                let mut m = lambda.clone();
                p[j] += h;
                m[j] -= h;
                let fd = (aux.log_r(&phi, &p, &z).unwrap() - aux.log_r(&phi, &m, &z).unwrap()) / (2.0 * h);
                assert!(rel_ok(gl[j], fd), "λ[{j}]: {} vs {fd}", gl[j]);
            }
        }
    }

    #[test]
    fn zero_layer_coefficient_gradient() {
        let aux = InverseFlow::new(MeanField::new(vec![FactorSpec::poisson()]), 0);
        let phi = vec![0.2, -0.1, 0.3, 0.1, 0.05, -0.2];
        let lambda = [0.7];
        let z = [3.0];
        let g = aux.grad_phi_log_r(&phi, &lambda, &z).unwrap();
        let t = sufficient_stats(FactorSpec::poisson(), 3.0);
        let mean = 0.2 * t[0] - 0.1 * t[1] + 0.3;
        let var = (2.0 * (0.1 * t[0] + 0.05 * t[1] - 0.2f64)).exp();
        assert!((g[0] - (lambda[0] - mean) / var * t[0]).abs() < 1e-14);
        // mean coefficient vanishes when λ₀ sits at the base mean
        let at_mean = [mean];
        let g = aux.grad_phi_log_r(&phi, &at_mean, &z).unwrap();
        assert!(g[2].abs() < 1e-15);
    }

    #[test]
    fn base_factors_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let aux = InverseFlow::new(MeanField::new(vec![FactorSpec::poisson()]), 0);
        for _ in 0..10 {
            let phi: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = [f64::from(rng.random_range(0..20u8))];
            let ev = aux.eval(&phi, &[0.0], &z);
            let (m, sd) = (ev.means[0], ev.log_sds[0].exp());
            let n = 200_000;
            let (lo, hi) = (m - 12.0 * sd, m + 12.0 * sd);
            let step = (hi - lo) / n as f64;
            let total: f64 = (0..=n)
                .map(|k| {
                    let x = lo + k as f64 * step;
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    w * aux.log_r(&phi, &[x], &z).unwrap().exp()
                })
                .sum::<f64>()
                * step;
            assert!((total - 1.0).abs() < 1e-8, "{total}");
        }
    }

    #[test]
    fn gradient_bounded_for_large_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (aux, phi, _, z) = random_case(&mut rng);
        let lambda = vec![1e3, -1e3, 5e2, -7e2];
        let g = aux.grad_lambda_log_r(&phi, &lambda, &z).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
