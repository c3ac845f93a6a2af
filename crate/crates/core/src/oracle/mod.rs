//! Ground truth for small problems: exact enumeration, quadrature over the
//! variational prior, exact KL, finite-difference gradient checks and the
//! score/reparameterization comparison.

mod battery;
mod enumerate;
mod gradcheck;
mod modes;
mod qhvm;
mod quadrature;
mod score_reparam;

pub use battery::{run_gradient_battery, BatteryConfig, BatteryReport, CheckSummary, CHECK_NAMES};
pub use enumerate::{
    enumerate_target, exact_kl, grid_axes, marginal_elbo, meanfield_pmf, EnumeratedPmf, MAX_STATES,
};
pub use gradcheck::{central_difference, check_gradient, CoordinateCheck, GradCheckReport, Tolerance};
pub use modes::{count_local_modes, local_modes};
pub use qhvm::{hierarchical_elbo_quadrature, qhvm_marginal, qhvm_marginal_mc, DEFAULT_NODES};
pub use quadrature::gauss_hermite;
pub use score_reparam::{exact_gaussian_gradient, score_reparam_report, ScoreReparamReport};
