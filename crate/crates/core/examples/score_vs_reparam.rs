//! Score-function and reparameterization gradients of a Gaussian
//! approximation to a Gaussian target: same mean, very different variance.

use hvm::model::GaussianTarget;
use hvm::oracle::score_reparam_report;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hvm::Result<()> {
    let target = GaussianTarget::new(1.0, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for lambda in [[0.0, 0.0], [0.8, 1.5], [-2.0, -1.0]] {
        let r = score_reparam_report(&target, &lambda, &mut rng, 50_000)?;
        println!("λ = {lambda:?}");
        for j in 0..2 {
            println!(
                "  coord {j}: exact {:+.4}  score {:+.4} ± {:.4}  reparam {:+.4} ± {:.4}  variance ratio {:.1}",
                r.exact[j], r.score_mean[j], r.score_se[j], r.reparam_mean[j], r.reparam_se[j], r.variance_ratio[j]
            );
        }
    }
    Ok(())
}
