//! Finite-difference gradient checking.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub relative: f64,
    /// Coordinates whose absolute error is below this floor always pass.
    pub absolute: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            relative: 1e-5,
            absolute: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Set when `f` was non-finite at a probe point.
    pub non_finite: bool,
    pub passed: bool,
}

/// Fourth-order central difference `[−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)] / 12h`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: &F, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|j| {
            let mut at = |d: f64| {
                x[j] = point[j] + d;
                let v = f(&x);
                x[j] = point[j];
                v
            };
            let (p2, p1, m1, m2) = (at(2.0 * step), at(step), at(-step), at(-2.0 * step));
            (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * step)
        })
        .collect()
}

/// Compares `analytic` with central differences of `f` at `point`.
pub fn check_gradient<F: Fn(&[f64]) -> f64>(
    f: F,
    analytic: &[f64],
    point: &[f64],
    step: f64,
    tol: Tolerance,
) -> GradCheckReport {
    assert_eq!(analytic.len(), point.len(), "gradient and point lengths differ");
    let numeric = central_difference(&f, point, step);
    let mut report = GradCheckReport {
        coordinates: Vec::with_capacity(point.len()),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        non_finite: !f(point).is_finite(),
        passed: true,
    };
    for (index, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let abs_error = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
        let finite = a.is_finite() && n.is_finite();
        let passed = finite && (abs_error < tol.absolute || rel_error < tol.relative);
        report.non_finite |= !n.is_finite();
        report.passed &= passed;
        if finite {
            report.max_abs_error = report.max_abs_error.max(abs_error);
            if abs_error >= tol.absolute {
                report.max_rel_error = report.max_rel_error.max(rel_error);
            }
        }
        report.coordinates.push(CoordinateCheck {
            index,
            analytic: a,
            numeric: n,
            abs_error,
            rel_error,
            passed,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm() {
        let x = [0.3, -1.2, 2.5];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let tight = Tolerance {
            relative: 1e-8,
            absolute: 1e-12,
        };
        let r = check_gradient(|x| x.iter().map(|v| v * v).sum(), &g, &x, 1e-3, tight);
        assert!(r.passed, "{r:?}");
        let bad: Vec<f64> = g.iter().map(|v| v * 1.01).collect();
        let r = check_gradient(|x| x.iter().map(|v| v * v).sum(), &bad, &x, 1e-3, Tolerance::default());
        assert!(!r.passed);
        assert!((r.max_rel_error - 0.01 / 1.01).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_noted() {
        let r = check_gradient(|x| x[0].ln(), &[1.0], &[0.0], 1e-3, Tolerance::default());
        assert!(r.non_finite && !r.passed);
    }
}
