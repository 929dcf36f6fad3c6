//! Bayesian phase estimation for a Mach-Zehnder interferometer fed with
//! symmetric two-mode Fock superpositions
//! `(|j+m⟩|j-m⟩ + |j-m⟩|j+m⟩)/√2`.

pub mod bayes_engine;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod interferometer;
pub mod rotation_kernels;

pub use error::{Error, Result};
