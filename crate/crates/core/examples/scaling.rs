//! Time per θ-gradient estimate as the number of latents grows.

use hvm::experiments::scaling_study;

fn main() -> hvm::Result<()> {
    let r = scaling_study(&[10, 30, 100, 300, 1000], 2, 10, 64, 15, 0)?;
    for p in &r.points {
        println!("d = {:>5}  {:.3} ms per call", p.dim, p.seconds_per_call * 1e3);
    }
    println!("log-log slope {:.2}", r.slope);
    Ok(())
}
