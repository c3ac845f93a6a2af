//! Exact summaries of the truncated Poisson mixture posterior and of a
//! mean-field fit placed at its largest mode.

use hvm::model::{Poisson2DTarget, TargetModel};
use hvm::oracle::{enumerate_target, exact_kl, local_modes, meanfield_pmf};
use hvm::stats::softplus_inv;

fn main() -> hvm::Result<()> {
    let target = Poisson2DTarget::default_instance();
    let cap = 40;
    let post = enumerate_target(&target, cap)?;
    let n = cap + 1;
    println!("log Z {:.6} over {} states", post.log_z(), post.len());
    println!("mean {:?}, correlation {:.3}", post.mean(), post.correlation()?);
    for (i, j) in local_modes(&post.probs(), n, n) {
        println!("mode at ({i}, {j}) with mass {:.4}", post.prob(i * n + j));
    }
    for &(r1, r2) in target.rates() {
        let lambda = [softplus_inv(r1), softplus_inv(r2)];
        let q = meanfield_pmf(target.factor_specs(), &lambda, cap)?;
        println!("independent Poissons at rates ({r1}, {r2}): KL {:.4}", exact_kl(&q, &post)?);
    }
    Ok(())
}
