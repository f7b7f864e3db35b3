//! Weighted multi-source domain adaptation toolkit.
//!
//! The crate covers the combined risk `tau * target + (1 - tau) * sum_k w_k * source_k`,
//! its least-squares minimiser, between-domain divergences over finite
//! hypothesis classes, covering-number and Rademacher complexity estimators,
//! closed-form generalization bounds, Monte Carlo checks of the underlying
//! deviation inequalities and a synthetic convergence experiment.

pub mod bounds;
pub mod cli;
pub mod complexity;
pub mod deviation;
pub mod divergence;
pub mod domain;
pub mod experiment;
pub mod error;
pub mod hypothesis;
pub mod linalg;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
