//! Hierarchical variational models for black-box inference.
//!
//! A mean-field likelihood `q(z | λ)` is expanded with a variational prior
//! `q(λ; θ)` and fitted by maximizing the hierarchical ELBO, whose entropy
//! term is bounded through an auxiliary model `r(λ | z; φ)`.

pub mod auxiliary;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimate;
pub mod estimators;
pub mod experiments;
pub mod fit;
pub mod meanfield;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod prior;
pub mod stats;

pub use error::{Error, Result};
