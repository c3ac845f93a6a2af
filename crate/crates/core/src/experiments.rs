//! End-to-end comparisons of mean-field and hierarchical fits against the
//! exact posterior, and the per-call cost study.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::auxiliary::{Auxiliary, InverseFlow};
use crate::error::{invalid, Result};
use crate::estimate::ScalarEstimate;
use crate::estimators::{EstimatorConfig, Hierarchical};
use crate::fit::{fit, FitConfig, FitResult};
use crate::meanfield::MeanField;
use crate::model::{BernoulliChain, TargetModel};
use crate::oracle::{
    count_local_modes, enumerate_target, exact_kl, marginal_elbo, meanfield_pmf, qhvm_marginal, qhvm_marginal_mc,
    EnumeratedPmf,
};
use crate::prior::{FlowPrior, Prior};

/// Random initial θ: mixture means and flow base means are centred at
/// `center` with spread `spread`; a point mass is drawn the same way.
pub fn init_theta<R: Rng + ?Sized>(prior: &Prior, spread: f64, center: f64, rng: &mut R) -> Vec<f64> {
    match prior {
        Prior::PointMass { dim } => (0..*dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                center + spread * e
            })
            .collect(),
        Prior::Mixture(m) => {
            let mut theta = m.init_theta(rng, spread);
            for k in 0..m.components() {
                let off = m.mean_offset(k);
                theta[off..off + m.dim()].iter_mut().for_each(|v| *v += center);
            }
            theta
        }
        Prior::Flow(f) => {
            let mut theta = f.init_theta(rng);
            theta[..f.dim()].iter_mut().for_each(|v| *v += center);
            theta
        }
    }
}

/// θ centred on a mean-field solution `lambda` with scale `sd`: the flow base
/// mean and every mixture mean start at `lambda` (mixture means jittered by
/// `sd`), all base scales at `sd`, and planar gates zero so each flow starts as
/// the identity.
pub fn warm_theta<R: Rng + ?Sized>(prior: &Prior, lambda: &[f64], sd: f64, rng: &mut R) -> Result<Vec<f64>> {
    if lambda.len() != prior.dim() || !(sd > 0.0) {
        return Err(invalid("warm start needs a λ of the prior dimension and sd > 0"));
    }
    let d = lambda.len();
    Ok(match prior {
        Prior::PointMass { .. } => lambda.to_vec(),
        Prior::Mixture(m) => {
            let means: Vec<Vec<f64>> = (0..m.components())
                .map(|_| {
                    lambda
                        .iter()
                        .map(|&l| {
                            let e: f64 = StandardNormal.sample(rng);
                            l + sd * e
                        })
                        .collect()
                })
                .collect();
            let k = m.components();
            m.theta_from_parts(&vec![1.0 / k as f64; k], &means, &vec![vec![sd; d]; k])
        }
        Prior::Flow(f) => {
            let mut theta = f.init_theta(rng);
            theta[..d].copy_from_slice(lambda);
            theta[d..2 * d].iter_mut().for_each(|v| *v = sd.ln());
            for k in 0..f.layers() {
                let off = 2 * d + k * (2 * d + 1) + d;
                theta[off..off + d].iter_mut().for_each(|v| *v = 0.0);
            }
            theta
        }
    })
}

/// φ whose base Gaussian sits at `lambda` with scale `sd`, so that `r`
/// starts equal to a prior from [`warm_theta`].
pub fn warm_phi<R: Rng + ?Sized>(aux: &Auxiliary, lambda: &[f64], sd: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut phi = aux.init_phi(rng);
    if let Auxiliary::InverseFlow(f) = aux {
        if lambda.len() != f.mean_field().param_dim() || !(sd > 0.0) {
            return Err(invalid("warm start needs a λ of the mean-field dimension and sd > 0"));
        }
        let d = lambda.len();
        for k in 0..f.layers() {
            let off = k * (2 * d + 1) + d;
            phi[off..off + d].iter_mut().for_each(|v| *v = 0.0);
        }
        for (j, &l) in lambda.iter().enumerate() {
            let o = f.coeff_offset(j);
            let s = (f.coeff_offset(j + 1) - o - 2) / 2;
            phi[o + s] = l;
            phi[o + 2 * s + 1] = sd.ln();
        }
    }
    Ok(phi)
}

/// How the HVM marginal is integrated over the prior noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalMethod {
    Quadrature { nodes: usize },
    MonteCarlo { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSettings {
    pub fit: FitConfig,
    pub meanfield_fit: FitConfig,
    /// Mean-field restarts; the one with the smallest exact KL is kept.
    pub meanfield_restarts: usize,
    pub init_spread: f64,
    pub init_center: f64,
    pub truncation: usize,
    pub marginal: MarginalMethod,
    /// Start the hierarchical fit at the best mean-field λ with this base scale
    /// instead of a random draw.
    pub warm_start: Option<f64>,
    /// Samples for the final bound estimates. With a warm start, the start
    /// point is kept when its bound estimate beats the fitted one.
    pub bound_samples: usize,
}

/// One fitted approximation scored against the exact posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scored {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub kl: f64,
    pub marginal_elbo: f64,
    /// Mean ELBO estimate over the last 50 iterations.
    pub final_elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Bound estimate at the reported parameters.
    pub bound: f64,
    pub bound_se: f64,
    #[serde(skip)]
    pub pmf: Option<EnumeratedPmf>,
    #[serde(skip)]
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub log_z: f64,
    pub meanfield: Scored,
    pub hvm: Scored,
    /// True when the warm start out-scored the fitted HVM and was kept.
    pub kept_warm_start: bool,
    #[serde(skip)]
    pub posterior: Option<EnumeratedPmf>,
}

impl Comparison {
    /// `KL(mean-field) − KL(HVM)`; positive when the hierarchical fit is closer.
    pub fn kl_improvement(&self) -> f64 {
        self.meanfield.kl - self.hvm.kl
    }
}

fn tail_mean(fit: &FitResult) -> f64 {
    let n = fit.trace.len();
    let w = n.min(50);
    fit.trace[n - w..].iter().map(|r| r.elbo_mean).sum::<f64>() / w as f64
}

fn score(fit: FitResult, pmf: EnumeratedPmf, posterior: &EnumeratedPmf, bound: ScalarEstimate) -> Result<Scored> {
    Ok(Scored {
        bound: bound.mean,
        bound_se: bound.std_error,
        kl: exact_kl(&pmf, posterior)?,
        marginal_elbo: marginal_elbo(&pmf, posterior)?,
        final_elbo: tail_mean(&fit),
        iterations: fit.iterations,
        converged: fit.converged,
        theta: fit.theta.clone(),
        phi: fit.phi.clone(),
        pmf: Some(pmf),
        fit: Some(fit),
    })
}

/// Best-of-restarts mean-field fit.
fn fit_meanfield(
    model: &dyn TargetModel,
    posterior: &EnumeratedPmf,
    s: &ComparisonSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Scored> {
    let specs = model.factor_specs();
    let prior = Prior::PointMass {
        dim: MeanField::for_model(model).param_dim(),
    };
    let aux = Auxiliary::Prior;
    let h = Hierarchical::new(model, &prior, &aux)?;
    let mut best: Option<Scored> = None;
    for _ in 0..s.meanfield_restarts.max(1) {
        let theta = init_theta(&prior, s.init_spread, s.init_center, rng);
        let res = fit(&h, theta, Vec::new(), &s.meanfield_fit, rng)?;
        let pmf = meanfield_pmf(specs, &res.theta, s.truncation)?;
        let bound = h.elbo(&res.theta, &[], rng, s.bound_samples)?;
        let scored = score(res, pmf, posterior, bound)?;
        if best.as_ref().is_none_or(|b| scored.kl < b.kl) {
            best = Some(scored);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fits mean-field and the given hierarchical model to `model` and scores
/// both by exact KL to the enumerated posterior.
pub fn compare(
    model: &dyn TargetModel,
    prior: &Prior,
    aux: &Auxiliary,
    s: &ComparisonSettings,
    seed: u64,
) -> Result<Comparison> {
    let posterior = enumerate_target(model, s.truncation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meanfield = fit_meanfield(model, &posterior, s, &mut rng)?;

    let h = Hierarchical::new(model, prior, aux)?;
    let (theta, phi) = match s.warm_start {
        Some(sd) => (
            warm_theta(prior, &meanfield.theta, sd, &mut rng)?,
            warm_phi(aux, &meanfield.theta, sd, &mut rng)?,
        ),
        None => (
            init_theta(prior, s.init_spread, s.init_center, &mut rng),
            aux.init_phi(&mut rng),
        ),
    };
    let start = (theta.clone(), phi.clone());
    let mut res = fit(&h, theta, phi, &s.fit, &mut rng)?;
    // both bounds use the same draws so their difference is precise
    let bound_seed: u64 = rng.random();
    let bound_at = |t: &[f64], p: &[f64]| h.elbo(t, p, &mut ChaCha8Rng::seed_from_u64(bound_seed), s.bound_samples);
    let mut bound = bound_at(&res.theta, &res.phi)?;
    let mut kept_warm_start = false;
    if s.warm_start.is_some() {
        let start_bound = bound_at(&start.0, &start.1)?;
        if start_bound.mean > bound.mean {
            log::info!(
                "warm start bound {:.5} beats fitted {:.5}; keeping the start",
                start_bound.mean,
                bound.mean
            );
            (res.theta, res.phi) = start;
            bound = start_bound;
            kept_warm_start = true;
        }
    }
    let specs = model.factor_specs();
    let pmf = match s.marginal {
        MarginalMethod::Quadrature { nodes } => qhvm_marginal(prior, &res.theta, specs, s.truncation, nodes)?,
        MarginalMethod::MonteCarlo { draws } => {
            qhvm_marginal_mc(prior, &res.theta, specs, s.truncation, &mut rng, draws)?.0
        }
    };
    let hvm = score(res, pmf, &posterior, bound)?;
    Ok(Comparison {
        log_z: posterior.log_z(),
        meanfield,
        hvm,
        kept_warm_start,
        posterior: Some(posterior),
    })
}

/// Poisson2D comparison with local-mode counts on the `(cap+1)²` grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Poisson2dOutcome {
    pub comparison: Comparison,
    pub modes_posterior: usize,
    pub modes_meanfield: usize,
    pub modes_hvm: usize,
}

pub fn poisson2d(
    model: &dyn TargetModel,
    prior: &Prior,
    aux: &Auxiliary,
    s: &ComparisonSettings,
    seed: u64,
) -> Result<Poisson2dOutcome> {
    if model.dim() != 2 {
        return Err(invalid("the Poisson2D driver needs a two-dimensional target"));
    }
    let comparison = compare(model, prior, aux, s, seed)?;
    let side = s.truncation + 1;
    let modes = |p: &Option<EnumeratedPmf>| p.as_ref().map_or(0, |p| count_local_modes(&p.probs(), side, side));
    Ok(Poisson2dOutcome {
        modes_posterior: modes(&comparison.posterior),
        modes_meanfield: modes(&comparison.meanfield.pmf),
        modes_hvm: modes(&comparison.hvm.pmf),
        comparison,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub dim: usize,
    pub seconds_per_call: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub flow_layers: usize,
    pub aux_layers: usize,
    pub samples: usize,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of log time against log d.
    pub slope: f64,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Median wall time of `calls` θ-gradient estimates on an alternating
/// Bernoulli chain of each length, with a flow prior and inverse-flow
/// auxiliary of fixed depth.
pub fn scaling_study(
    dims: &[usize],
    flow_layers: usize,
    aux_layers: usize,
    samples: usize,
    calls: usize,
    seed: u64,
) -> Result<ScalingReport> {
    if dims.len() < 2 || calls == 0 {
        return Err(invalid("need at least two dimensions and one call"));
    }
    let cfg = EstimatorConfig::with_samples(samples);
    let mut points = Vec::with_capacity(dims.len());
    for &d in dims {
        let model = BernoulliChain::alternating(d)?;
        let prior = Prior::Flow(FlowPrior::new(d, flow_layers));
        let aux = Auxiliary::InverseFlow(InverseFlow::new(MeanField::for_model(&model), aux_layers));
        let h = Hierarchical::new(&model, &prior, &aux)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = prior.init_theta(&mut rng, 1.0);
        let phi = aux.init_phi(&mut rng);
        h.grad_theta(&theta, &phi, &cfg, &mut rng)?;
        let mut times = Vec::with_capacity(calls);
        for _ in 0..calls {
            let t = Instant::now();
            let g = h.grad_theta(&theta, &phi, &cfg, &mut rng)?;
            std::hint::black_box(g);
            times.push(t.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        points.push(ScalingPoint {
            dim: d,
            seconds_per_call: times[times.len() / 2],
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.dim as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.seconds_per_call).collect();
    Ok(ScalingReport {
        flow_layers,
        aux_layers,
        samples,
        slope: log_log_slope(&xs, &ys),
        points,
    })
}
