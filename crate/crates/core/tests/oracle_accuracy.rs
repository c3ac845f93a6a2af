//! The oracle settings bundled in configs/ are accurate on fitted parameters.

use hvm::config::RunConfig;
use hvm::experiments::compare;
use hvm::oracle::{exact_kl, qhvm_marginal, qhvm_marginal_mc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn load(name: &str) -> RunConfig {
    RunConfig::load(format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR")).as_ref()).unwrap()
}

#[test]
fn sbn_flow_marginal_is_converged_in_nodes() {
    let mut cfg = load("sbn.toml");
    cfg.run.iterations = 3000;
    cfg.run.min_iterations = 3000;
    cfg.run.refine_iterations = 0;
    cfg.run.meanfield_restarts = 1;
    let model = cfg.model.build().unwrap();
    let prior = cfg.prior.build(model.dim()).unwrap();
    let aux = cfg.aux.build(model.as_ref());
    let s = cfg.comparison_settings();
    let c = compare(model.as_ref(), &prior, &aux, &s, 0).unwrap();
    let specs = model.factor_specs();
    let coarse = qhvm_marginal(&prior, &c.hvm.theta, specs, s.truncation, cfg.run.oracle_nodes).unwrap();
    let fine = qhvm_marginal(&prior, &c.hvm.theta, specs, s.truncation, 2 * cfg.run.oracle_nodes).unwrap();
    let worst = (0..coarse.len()).map(|i| (coarse.prob(i) - fine.prob(i)).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "doubling nodes moves the marginal by {worst:e}");

    // Monte Carlo over the same noise agrees within its standard error
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mc, se) = qhvm_marginal_mc(&prior, &c.hvm.theta, specs, s.truncation, &mut rng, 200_000).unwrap();
    for i in 0..mc.len() {
        assert!((mc.prob(i) - fine.prob(i)).abs() <= 4.0 * se[i] + 1e-9, "state {i}");
    }
    let post = c.posterior.as_ref().unwrap();
    assert!((exact_kl(&coarse, post).unwrap() - exact_kl(&fine, post).unwrap()).abs() < 1e-5);
}
