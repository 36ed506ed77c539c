//! Smoothing of time-quasi-periodic perturbations of anharmonic oscillators.

pub mod averaging;
pub mod classical;
pub mod config;
pub mod diophantine;
pub mod error;
pub mod experiment;
pub mod floquet;
pub mod par;
pub mod potentials;
pub mod smoothing;
pub mod spectral;
pub mod quadrature;
pub mod symbol_grid;

pub use error::{Error, Result};
