//! Central-difference checks of every analytic gradient, plus one check with
//! a deliberately broken gradient to show what a failure looks like.

use hvm::oracle::{run_gradient_battery, BatteryConfig};

fn main() -> hvm::Result<()> {
    let report = run_gradient_battery(&BatteryConfig::default())?;
    for c in &report.checks {
        println!(
            "{:<30} {:>4} coords  max abs err {:.1e}  {}",
            c.name,
            c.coordinates,
            c.max_abs_error,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    let broken = run_gradient_battery(&BatteryConfig {
        configurations: 5,
        inject_fault: Some("mixture-full-theta-vjp".into()),
        ..BatteryConfig::default()
    })?;
    println!("with an injected 1% error: failing {:?}", broken.failures());
    Ok(())
}
