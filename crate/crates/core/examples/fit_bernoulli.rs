//! Fits a two-component mixture prior to a pair of strongly coupled binary
//! latents and compares the exact KL with the best mean-field fit.

use hvm::auxiliary::{Auxiliary, InverseFlow};
use hvm::estimators::{EstimatorConfig, Hierarchical};
use hvm::fit::{fit, FitConfig};
use hvm::meanfield::MeanField;
use hvm::model::{BernoulliTable, TargetModel};
use hvm::oracle::{enumerate_target, exact_kl, meanfield_pmf, qhvm_marginal, DEFAULT_NODES};
use hvm::optim::OptimizerConfig;
use hvm::prior::{Covariance, MixturePrior, Prior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hvm::Result<()> {
    let target = BernoulliTable::coupled_pair();
    let post = enumerate_target(&target, 0)?;
    println!("posterior over (z1, z2): {:?}", post.probs());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = FitConfig {
        max_iterations: 4000,
        min_iterations: 2000,
        estimator: EstimatorConfig::with_samples(16),
        optimizer: OptimizerConfig {
            learning_rate: 1e-2,
            ..OptimizerConfig::default()
        },
        ..FitConfig::default()
    };

    // mean-field: a point-mass prior with the trivial auxiliary model
    let pm = Prior::PointMass { dim: 2 };
    let trivial = Auxiliary::Prior;
    let h = Hierarchical::new(&target, &pm, &trivial)?;
    let mf = fit(&h, vec![0.5, -0.5], vec![], &cfg, &mut rng)?;
    let q_mf = meanfield_pmf(target.factor_specs(), &mf.theta, 0)?;
    println!("mean-field   KL {:.4}  q {:?}", exact_kl(&q_mf, &post)?, q_mf.probs());

    let m = MixturePrior::new(2, 2, Covariance::Diagonal);
    let theta = m.theta_from_parts(&[0.5, 0.5], &[vec![1.0, 0.5], vec![-1.0, -0.5]], &[vec![0.5, 0.5], vec![0.5, 0.5]]);
    let prior = Prior::Mixture(m);
    let aux = Auxiliary::InverseFlow(InverseFlow::new(MeanField::for_model(&target), 2));
    let phi = aux.init_phi(&mut rng);
    let h = Hierarchical::new(&target, &prior, &aux)?;
    let res = fit(&h, theta, phi, &cfg, &mut rng)?;
    let q = qhvm_marginal(&prior, &res.theta, target.factor_specs(), 0, DEFAULT_NODES)?;
    println!("hierarchical KL {:.4}  q {:?}", exact_kl(&q, &post)?, q.probs());
    println!("{} iterations, converged {}", res.iterations, res.converged);
    Ok(())
}
