use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::stats::log_std_normal;

fn rel_ok(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()) || (a - b).abs() < 1e-8
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += h;
            m[j] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn flow_1d(w: f64, u: f64, b: f64) -> (Prior, Vec<f64>) {
    let prior = Prior::Flow(FlowPrior::new(1, 1));
    (prior, vec![0.0, 0.0, w, u, b])
}

#[test]
fn flow_scalar_example() {
    let (prior, theta) = flow_1d(1.0, 0.5, 0.0);
    let noise = PriorNoise::Flow { eps: vec![1.0] };
    let lambda = prior.lambda_of_eps(&theta, &noise).unwrap();
    assert!((lambda[0] - 1.380_797_077_977_882_4).abs() < 1e-14);
    let branch = prior.branches(&theta, &noise).unwrap().remove(0);
    let lq = prior.log_q(&theta, &branch).unwrap();
    assert!((lq + 1.609_548_290_118_218_2).abs() < 1e-13);
}

#[test]
fn identity_flows() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let prior = Prior::Flow(FlowPrior::new(3, 2));
    let mut theta = prior.init_theta(&mut rng, 1.0);
    // zero all gates
    for k in 0..2 {
        let off = 6 + k * 7 + 3;
        theta[off..off + 3].fill(0.0);
    }
    let eps = vec![0.3, -1.2, 2.0];
    let noise = PriorNoise::Flow { eps: eps.clone() };
    let branch = prior.branches(&theta, &noise).unwrap().remove(0);
    assert_eq!(branch.lambda, eps);
    assert!((prior.log_q(&theta, &branch).unwrap() - log_std_normal(&eps)).abs() < 1e-14);
    let g = prior.grad_theta_lambda(&theta, &noise, &[0.5, -1.0, 2.0]).unwrap();
    assert_eq!(g[6 + 6], 0.0);
    assert_eq!(g[6 + 7 + 6], 0.0);

    let empty = Prior::Flow(FlowPrior::new(2, 0));
    let noise = PriorNoise::Flow { eps: vec![0.1, 0.2] };
    assert_eq!(empty.lambda_of_eps(&[0.0; 4], &noise).unwrap(), vec![0.1, 0.2]);

    let at_mode = PriorNoise::Flow { eps: vec![0.0, 0.0] };
    let b = empty.branches(&[0.0; 4], &at_mode).unwrap().remove(0);
    assert_eq!(empty.grad_lambda_log_q(&[0.0; 4], &b).unwrap(), vec![0.0, 0.0]);
    assert!(empty.log_q_at(&[0.0; 4], &[0.0, 0.0]).is_err());
}

#[test]
fn identity_flow_gate_gradient() {
    let prior = Prior::Flow(FlowPrior::new(2, 1));
    let theta = vec![0.0, 0.0, 0.0, 0.0, 0.4, -0.7, 0.0, 0.0, 0.2];
    let eps = vec![0.9, 0.3];
    let noise = PriorNoise::Flow { eps: eps.clone() };
    let c = [1.5, -0.5];
    let g = prior.grad_theta_lambda(&theta, &noise, &c).unwrap();
    let t = (0.4 * 0.9 - 0.7 * 0.3 + 0.2f64).tanh();
    assert!((g[6] - c[0] * t).abs() < 1e-14);
    assert!((g[7] - c[1] * t).abs() < 1e-14);
    assert_eq!(prior.grad_theta_lambda(&theta, &noise, &[0.0, 0.0]).unwrap(), vec![0.0; 9]);
}

fn random_flow(rng: &mut ChaCha8Rng, d: usize, layers: usize) -> (Prior, Vec<f64>, Vec<f64>) {
    let prior = Prior::Flow(FlowPrior::new(d, layers));
    let theta: Vec<f64> = (0..prior.num_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let eps: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    (prior, theta, eps)
}

#[test]
fn flow_theta_vjp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (prior, theta, eps) = random_flow(&mut rng, 3, 2);
        let noise = PriorNoise::Flow { eps };
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = prior.grad_theta_lambda(&theta, &noise, &c).unwrap();
        let f = |th: &[f64]| {
            let l = prior.lambda_of_eps(th, &noise).unwrap();
            l.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = central(f, &theta, 1e-5);
        for (a, b) in analytic.iter().zip(&fd) {
            assert!(rel_ok(*a, *b), "{a} vs {b}");
        }
    }
}

#[test]
fn flow_lambda_gradient_via_noise_identity() {
    // d/dε log q(λ(ε)) = (∂λ/∂ε)ᵀ ∇_λ log q; the vjp over the base mean gives (∂λ/∂v₀)ᵀ.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (prior, theta, eps) = random_flow(&mut rng, 3, 2);
        let Prior::Flow(flow) = &prior else { unreachable!() };
        let noise = PriorNoise::Flow { eps: eps.clone() };
        let branch = prior.branches(&theta, &noise).unwrap().remove(0);
        let g = prior.grad_lambda_log_q(&theta, &branch).unwrap();
        let pulled = prior.grad_theta_lambda(&theta, &noise, &g).unwrap();
        let f = |e: &[f64]| flow.log_density(&theta, &flow.forward(&theta, e));
        let fd = central(f, &eps, 1e-5);
        for j in 0..3 {
            let analytic = pulled[j] * theta[3 + j].exp();
            assert!(rel_ok(analytic, fd[j]), "{analytic} vs {}", fd[j]);
        }
    }
}

/// Inverts a scalar flow by bisection (maps are increasing).
fn invert_1d(flow: &FlowPrior, theta: &[f64], lambda: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if flow.forward(theta, &[mid]).lambda()[0] < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn flow_lambda_gradient_by_inversion_1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (prior, theta, eps) = random_flow(&mut rng, 1, 2);
        let Prior::Flow(flow) = &prior else { unreachable!() };
        let branch = prior.branches(&theta, &PriorNoise::Flow { eps }).unwrap().remove(0);
        let g = prior.grad_lambda_log_q(&theta, &branch).unwrap()[0];
        let lq = |l: f64| {
            let e = invert_1d(flow, &theta, l);
            flow.log_density(&theta, &flow.forward(&theta, &[e]))
        };
        let h = 1e-5;
        let fd = (lq(branch.lambda[0] + h) - lq(branch.lambda[0] - h)) / (2.0 * h);
        assert!((g - fd).abs() < 1e-5 * g.abs().max(1.0), "{g} vs {fd}");
    }
}

#[test]
fn flow_density_normalizes_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let (prior, theta, _) = random_flow(&mut rng, 1, 2);
        let Prior::Flow(flow) = &prior else { unreachable!() };
        let n = 400_001;
        let mut total = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..n {
            let e = -12.0 + 24.0 * i as f64 / (n - 1) as f64;
            let path = flow.forward(&theta, &[e]);
            let point = (path.lambda()[0], flow.log_density(&theta, &path).exp());
            if let Some((l0, q0)) = prev {
                total += 0.5 * (point.1 + q0) * (point.0 - l0);
            }
            prev = Some(point);
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}

fn random_mixture(rng: &mut ChaCha8Rng, cov: Covariance) -> (Prior, Vec<f64>) {
    let prior = Prior::Mixture(MixturePrior::new(3, 2, cov));
    let theta = (0..prior.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (prior, theta)
}

#[test]
fn mixture_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cov in [Covariance::Diagonal, Covariance::Full] {
        for _ in 0..50 {
            let (prior, theta) = random_mixture(&mut rng, cov);
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let k = rng.random_range(0..2);
            let noise = PriorNoise::Mixture { component: Some(k), u };
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let analytic = prior.grad_theta_lambda(&theta, &noise, &c).unwrap();
            let f = |th: &[f64]| {
                let l = prior.lambda_of_eps(th, &noise).unwrap();
                l.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            for (a, b) in analytic.iter().zip(central(f, &theta, 1e-5)) {
                assert!(rel_ok(*a, b), "{cov:?}: {a} vs {b}");
            }

            let lambda: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let branch = Branch {
                component: 0,
                weight: 1.0,
                lambda: lambda.clone(),
                path: None,
            };
            let g = prior.grad_lambda_log_q(&theta, &branch).unwrap();
            let fd = central(|l: &[f64]| prior.log_q_at(&theta, l).unwrap(), &lambda, 1e-5);
            for (a, b) in g.iter().zip(fd) {
                assert!(rel_ok(*a, b), "{cov:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn single_component_gradient_is_precision_times_residual() {
    let m = MixturePrior::new(2, 1, Covariance::Diagonal);
    let theta = m.theta_from_parts(&[1.0], &[vec![1.0, -1.0]], &[vec![2.0, 0.5]]);
    let g = m.grad_lambda_log_density(&theta, &[0.0, 0.0]);
    assert!((g[0] - 0.25).abs() < 1e-14);
    assert!((g[1] + 4.0).abs() < 1e-14);
}

#[test]
fn redundant_mixture_equals_single_gaussian() {
    let two = MixturePrior::new(2, 2, Covariance::Full);
    let one = MixturePrior::new(2, 1, Covariance::Full);
    let means = vec![vec![0.5, -0.3]; 2];
    let sds = vec![vec![1.3, 0.7]; 2];
    let t2 = two.theta_from_parts(&[0.5, 0.5], &means, &sds);
    let t1 = one.theta_from_parts(&[1.0], &means[..1], &sds[..1]);
    for l in [[0.0, 0.0], [1.0, -2.0], [3.0, 0.4]] {
        assert!((two.log_density(&t2, &l) - one.log_density(&t1, &l)).abs() < 1e-14);
    }
    let w = two.weights(&t2);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn component_sweep_shapes() {
    let prior = Prior::Mixture(MixturePrior::new(2, 3, Covariance::Diagonal));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = prior.init_theta(&mut rng, 1.0);
    let sweep = prior.mixture_component_sweep(&theta, &[0.1, 0.2]).unwrap();
    assert_eq!(sweep.len(), 3);
    let noise = prior.sample_eps(&theta, true, &mut rng);
    assert_eq!(prior.branches(&theta, &noise).unwrap().len(), 3);

    let single = Prior::Mixture(MixturePrior::new(2, 1, Covariance::Diagonal));
    let t = single.init_theta(&mut rng, 1.0);
    for _ in 0..20 {
        match single.sample_eps(&t, false, &mut rng) {
            PriorNoise::Mixture { component, .. } => assert_eq!(component, Some(0)),
            other => panic!("unexpected noise {other:?}"),
        }
    }
    assert!(Prior::Flow(FlowPrior::new(2, 1)).mixture_component_sweep(&[0.0; 9], &[0.0, 0.0]).is_err());
}

#[test]
fn noise_is_seed_deterministic() {
    let prior = Prior::Flow(FlowPrior::new(3, 2));
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..5).map(|_| prior.sample_eps(&[], true, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut mean = [0.0; 3];
    for _ in 0..n {
        if let PriorNoise::Flow { eps } = prior.sample_eps(&[], true, &mut rng) {
            for j in 0..3 {
                mean[j] += eps[j] / n as f64;
            }
        }
    }
    for m in mean {
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
    }
}
