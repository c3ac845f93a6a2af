use super::{check_index, check_latents, TargetModel};
use crate::error::{invalid, Result};
use crate::stats::{ln_factorial, log_sum_exp, FactorSpec};

/// Correlated pair of count variables: a finite mixture of product-Poisson
/// components, `Σ_m w_m Pois(z₁; a_m) Pois(z₂; b_m)`.
#[derive(Debug, Clone)]
pub struct Poisson2DTarget {
    weights: Vec<f64>,
    rates: Vec<(f64, f64)>,
    log_weights: Vec<f64>,
    specs: [FactorSpec; 2],
}

impl Poisson2DTarget {
    pub fn new(weights: Vec<f64>, rates: Vec<(f64, f64)>) -> Result<Self> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(invalid(format!(
                "need one rate pair per weight, got {} weights and {} pairs",
                weights.len(),
                rates.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if rates
            .iter()
            .any(|&(a, b)| !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0))
        {
            return Err(invalid("Poisson rates must be positive"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            rates,
            log_weights,
            specs: [FactorSpec::poisson(); 2],
        })
    }

    /// Three well-separated components with weights (0.4, 0.35, 0.25) and rate
    /// pairs (2,2), (12,3), (5,12).
    pub fn default_instance() -> Self {
        Self::new(
            vec![0.4, 0.35, 0.25],
            vec![(2.0, 2.0), (12.0, 3.0), (5.0, 12.0)],
        )
        .expect("default instance is valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[(f64, f64)] {
        &self.rates
    }
}

fn log_pois(z: f64, rate: f64) -> f64 {
    z * rate.ln() - rate - ln_factorial(z)
}

impl TargetModel for Poisson2DTarget {
    fn factor_specs(&self) -> &[FactorSpec] {
        &self.specs
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_latents(&self.specs, z)?;
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&self.rates)
            .map(|(lw, &(a, b))| lw + log_pois(z[0], a) + log_pois(z[1], b))
            .collect();
        log_sum_exp(&terms)
    }

    /// The mixture couples both coordinates, so each blanket is the full joint.
    fn log_blanket(&self, i: usize, z: &[f64]) -> Result<f64> {
        check_index(2, i)?;
        self.log_joint(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_is_independent_pair() {
        let t = Poisson2DTarget::new(vec![1.0], vec![(3.0, 5.0)]).unwrap();
        assert!((t.log_joint(&[0.0, 0.0]).unwrap() + 8.0).abs() < 1e-12);
        for z in [[1.0, 4.0], [7.0, 2.0]] {
            let expected = log_pois(z[0], 3.0) + log_pois(z[1], 5.0);
            assert!((t.log_joint(&z).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_weights_reduce_to_first_component() {
        let full = Poisson2DTarget::new(
            vec![1.0, 0.0, 0.0],
            vec![(2.0, 2.0), (12.0, 3.0), (5.0, 12.0)],
        )
        .unwrap();
        let single = Poisson2DTarget::new(vec![1.0], vec![(2.0, 2.0)]).unwrap();
        for z1 in 0..15 {
            for z2 in 0..15 {
                let z = [z1 as f64, z2 as f64];
                assert!((full.log_joint(&z).unwrap() - single.log_joint(&z).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn brute_force_mixture_pmf() {
        let t = Poisson2DTarget::default_instance();
        let z = [2.0, 9.0];
        // independent evaluation with explicit factorials
        let pois = |k: u32, r: f64| {
            let fact: f64 = (1..=k).map(|j| j as f64).product();
            r.powi(k as i32) * (-r).exp() / fact
        };
        let p = 0.4 * pois(2, 2.0) * pois(9, 2.0)
            + 0.35 * pois(2, 12.0) * pois(9, 3.0)
            + 0.25 * pois(2, 5.0) * pois(9, 12.0);
        assert!((t.log_joint(&z).unwrap() - p.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_construction() {
        assert!(Poisson2DTarget::new(vec![0.5, 0.4], vec![(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(Poisson2DTarget::new(vec![1.0], vec![(0.0, 1.0)]).is_err());
        assert!(Poisson2DTarget::new(vec![], vec![]).is_err());
        let t = Poisson2DTarget::default_instance();
        assert!(t.log_joint(&[1.5, 0.0]).is_err());
        assert!(t.log_blanket(2, &[0.0, 0.0]).is_err());
    }
}
