//! Mean-field versus a three-component mixture prior on the product-Poisson
//! mixture, using the bundled configuration. Takes an optional seed.
//!
//! `cargo run --release --example poisson2d_mixture -- 3`

use hvm::config::RunConfig;
use hvm::experiments::poisson2d;
use hvm::oracle::{local_modes, EnumeratedPmf};

const SHADES: &[u8] = b" .:-=+*#%@";

fn sketch(title: &str, pmf: &EnumeratedPmf, cap: usize) {
    let p = pmf.probs();
    let n = cap + 1;
    let max = p.iter().cloned().fold(0.0, f64::max);
    println!("{title}  (z1 down, z2 across, 0..=20)");
    for i in 0..=20 {
        let row: String = (0..=20)
            .map(|j| {
                let level = (p[i * n + j] / max * (SHADES.len() - 1) as f64).round() as usize;
                SHADES[level] as char
            })
            .collect();
        println!("  |{row}|");
    }
}

fn main() -> hvm::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/poisson2d.toml");
    let cfg = RunConfig::load(path.as_ref())?;
    let model = cfg.model.build()?;
    let prior = cfg.prior.build(2)?;
    let aux = cfg.aux.build(model.as_ref());
    let s = cfg.comparison_settings();
    let out = poisson2d(model.as_ref(), &prior, &aux, &s, seed)?;
    let c = &out.comparison;
    let n = s.truncation + 1;
    for (name, pmf) in [("posterior", &c.posterior), ("mean-field", &c.meanfield.pmf), ("mixture", &c.hvm.pmf)] {
        let Some(pmf) = pmf else { continue };
        sketch(name, pmf, s.truncation);
        println!("  modes at {:?}", local_modes(&pmf.probs(), n, n));
    }
    println!("KL mean-field {:.4}, KL mixture {:.4}", c.meanfield.kl, c.hvm.kl);
    Ok(())
}
