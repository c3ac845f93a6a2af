use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::auxiliary::InverseFlow;
use crate::meanfield::{elbo_mf, grad_lambda_mf};
use crate::model::{BernoulliTable, DefKind, DefModel, GaussianTarget};
use crate::prior::{Covariance, FlowPrior, MixturePrior};
use crate::stats::{logit, softplus_inv};

fn within(a: f64, b: f64, se: f64) -> bool {
    (a - b).abs() <= 3.0 * se
}

#[test]
fn point_mass_at_exact_posterior_has_zero_gap() {
    let target = BernoulliTable::single(0.75).unwrap();
    let prior = Prior::PointMass { dim: 1 };
    let aux = Auxiliary::Prior;
    let h = Hierarchical::new(&target, &prior, &aux).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = h.elbo(&[logit(0.75)], &[], &mut rng, 100).unwrap();
    assert!(e.mean.abs() < 1e-12 && e.std_error < 1e-12);
    let g = h.grad_theta(&[logit(0.75)], &[], &EstimatorConfig::with_samples(100), &mut rng).unwrap();
    assert!(g.mean[0].abs() < 1e-12);
}

#[test]
fn near_degenerate_mixture_matches_mean_field() {
    let target = DefModel::synthetic(DefKind::Bernoulli, vec![3, 2], 4, 1.5, 0.0, 0.0, 1).unwrap();
    let m = MixturePrior::new(5, 1, Covariance::Diagonal);
    let mu = vec![0.3, -0.2, 0.5, 0.0, -0.4];
    let theta = m.theta_from_parts(&[1.0], &[mu.clone()], &[vec![1e-6; 5]]);
    let prior = Prior::Mixture(m);
    let aux = Auxiliary::Prior;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hv = hierarchical_elbo(&target, &prior, &aux, &theta, &[], &mut rng, 100_000).unwrap();
    let mf = elbo_mf(&target, &mu, &mut rng, 100_000).unwrap();
    let se = (hv.std_error.powi(2) + mf.std_error.powi(2)).sqrt();
    assert!((hv.mean - mf.mean).abs() <= 3.0 * se + 1e-3);
}

#[test]
fn stationary_at_degenerate_exact_prior() {
    let target = BernoulliTable::single(0.75).unwrap();
    let m = MixturePrior::new(1, 1, Covariance::Diagonal);
    let theta = m.theta_from_parts(&[1.0], &[vec![logit(0.75)]], &[vec![1e-6]]);
    let prior = Prior::Mixture(m);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = grad_theta(&target, &prior, &Auxiliary::Prior, &theta, &[], &mut rng, 10_000).unwrap();
    for j in 0..g.len() {
        assert!(g.mean[j].abs() <= 3.0 * g.std_error[j] + 1e-9, "{j}: {:?}", g);
    }
}

#[test]
fn zero_weight_component_changes_nothing() {
    let target = BernoulliTable::coupled_pair();
    let two = MixturePrior::new(2, 2, Covariance::Diagonal);
    let one = MixturePrior::new(2, 1, Covariance::Diagonal);
    let means = vec![vec![0.5, -0.5], vec![3.0, 3.0]];
    let sds = vec![vec![0.8, 1.2], vec![1.0, 1.0]];
    let mut t2 = two.theta_from_parts(&[0.5, 0.5], &means, &sds);
    t2[0] = 0.0;
    t2[1] = -1000.0;
    let t1 = one.theta_from_parts(&[1.0], &means[..1], &sds[..1]);
    let (p2, p1) = (Prior::Mixture(two.clone()), Prior::Mixture(one.clone()));
    let aux = Auxiliary::Prior;
    let cfg = EstimatorConfig::with_samples(200);
    let e2 = Hierarchical::new(&target, &p2, &aux)
        .unwrap()
        .estimate(&t2, &[], &cfg, None, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    let e1 = Hierarchical::new(&target, &p1, &aux)
        .unwrap()
        .estimate(&t1, &[], &cfg, None, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    assert_eq!(e1.elbo.mean.to_bits(), e2.elbo.mean.to_bits());
    for j in 0..2 {
        assert_eq!(
            e1.grad_theta.mean[one.mean_offset(0) + j].to_bits(),
            e2.grad_theta.mean[two.mean_offset(0) + j].to_bits()
        );
    }
}

#[test]
fn marginalized_and_sampled_components_agree() {
    let target = BernoulliTable::coupled_pair();
    let m = MixturePrior::new(2, 2, Covariance::Diagonal);
    let theta = m.theta_from_parts(
        &[0.3, 0.7],
        &[vec![1.0, -1.0], vec![-1.5, 2.0]],
        &[vec![0.5, 0.7], vec![1.1, 0.4]],
    );
    let prior = Prior::Mixture(m);
    let mf = MeanField::for_model(&target);
    let aux = Auxiliary::InverseFlow(InverseFlow::new(mf, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phi = aux.init_phi(&mut rng);
    let h = Hierarchical::new(&target, &prior, &aux).unwrap();
    let marg = h.estimate(&theta, &phi, &EstimatorConfig::with_samples(50_000), None, &mut rng).unwrap();
    let sampled_cfg = EstimatorConfig {
        samples: 200_000,
        marginalize_components: false,
        ..EstimatorConfig::default()
    };
    let samp = h.estimate(&theta, &phi, &sampled_cfg, None, &mut rng).unwrap();
    let se = (marg.elbo.std_error.powi(2) + samp.elbo.std_error.powi(2)).sqrt();
    assert!(within(marg.elbo.mean, samp.elbo.mean, se));
    for j in 0..theta.len() {
        let se = (marg.grad_theta.std_error[j].powi(2) + samp.grad_theta.std_error[j].powi(2)).sqrt();
        assert!(within(marg.grad_theta.mean[j], samp.grad_theta.mean[j], se), "θ[{j}]");
    }
}

#[test]
fn localized_and_global_r_terms_agree() {
    let target = DefModel::synthetic(DefKind::Bernoulli, vec![3, 2], 4, 1.5, 0.0, 0.0, 1).unwrap();
    let prior = Prior::Flow(FlowPrior::new(5, 2));
    let mf = MeanField::for_model(&target);
    let aux = Auxiliary::InverseFlow(InverseFlow::new(mf, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = prior.init_theta(&mut rng, 1.0);
    let mut phi = aux.init_phi(&mut rng);
    // give r some dependence on z
    if let Auxiliary::InverseFlow(f) = &aux {
        for j in 0..5 {
            phi[f.coeff_offset(j)] = 0.5;
        }
    }
    let h = Hierarchical::new(&target, &prior, &aux).unwrap();
    let local = h.grad_theta(&theta, &phi, &EstimatorConfig::with_samples(40_000), &mut rng).unwrap();
    let global_cfg = EstimatorConfig {
        samples: 40_000,
        localize_r: false,
        ..EstimatorConfig::default()
    };
    let global = h.grad_theta(&theta, &phi, &global_cfg, &mut rng).unwrap();
    for j in 0..theta.len() {
        let se = (local.std_error[j].powi(2) + global.std_error[j].powi(2)).sqrt();
        assert!(within(local.mean[j], global.mean[j], se), "θ[{j}]");
    }
}

#[test]
fn score_and_local_gradients_agree() {
    let target = DefModel::synthetic(DefKind::Bernoulli, vec![3, 2], 4, 1.5, 0.0, 0.0, 1).unwrap();
    let lambda = [0.2, -0.4, 0.1, 0.6, -0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = score_gradient(&target, &lambda, &mut rng, 50_000).unwrap();
    let b = grad_lambda_mf(&target, &lambda, &mut rng, 50_000).unwrap();
    for j in 0..5 {
        let se = (a.std_error[j].powi(2) + b.std_error[j].powi(2)).sqrt();
        assert!(within(a.mean[j], b.mean[j], se));
    }
    let single = BernoulliTable::single(0.75).unwrap();
    let g = score_gradient(&single, &[0.0], &mut rng, 50_000).unwrap();
    assert!(within(g.mean[0], 0.25 * 3f64.ln(), g.std_error[0]));
}

#[test]
fn reparameterization_on_gaussian_target() {
    let target = GaussianTarget::new(1.0, 1.0).unwrap();
    let lambda = [0.0, softplus_inv(1.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rep = reparam_gradient(&target, &lambda, &mut rng, 20_000).unwrap();
    assert!(within(rep.mean[0], 1.0, rep.std_error[0].max(1e-12)));
    let score = score_gradient(&target, &lambda, &mut rng, 20_000).unwrap();
    for j in 0..2 {
        let se = (rep.std_error[j].powi(2) + score.std_error[j].powi(2)).sqrt();
        assert!(within(rep.mean[j], score.mean[j], se));
    }
    assert!(reparam_gradient(&BernoulliTable::single(0.5).unwrap(), &[0.0], &mut rng, 10).is_err());
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let target = DefModel::synthetic(DefKind::Bernoulli, vec![3, 2], 4, 1.5, 0.0, 0.0, 1).unwrap();
    let prior = Prior::Flow(FlowPrior::new(5, 2));
    let aux = Auxiliary::InverseFlow(InverseFlow::new(MeanField::for_model(&target), 3));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let theta = prior.init_theta(&mut rng, 1.0);
            let phi = aux.init_phi(&mut rng);
            let h = Hierarchical::new(&target, &prior, &aux).unwrap();
            let e = h.estimate(&theta, &phi, &EstimatorConfig::with_samples(64), None, &mut rng).unwrap();
            let mut bits: Vec<u64> = e.grad_theta.mean.iter().map(|v| v.to_bits()).collect();
            bits.extend(e.grad_phi.mean.iter().map(|v| v.to_bits()));
            bits.push(e.elbo.mean.to_bits());
            bits
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn shape_validation() {
    let target = BernoulliTable::coupled_pair();
    let aux = Auxiliary::InverseFlow(InverseFlow::new(MeanField::for_model(&target), 1));
    assert!(Hierarchical::new(&target, &Prior::PointMass { dim: 2 }, &aux).is_err());
    assert!(Hierarchical::new(&target, &Prior::Flow(FlowPrior::new(3, 1)), &Auxiliary::Prior).is_err());
    let prior = Prior::Flow(FlowPrior::new(2, 1));
    let h = Hierarchical::new(&target, &prior, &aux).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(h.elbo(&[0.0; 3], &[], &mut rng, 10).is_err());
}
