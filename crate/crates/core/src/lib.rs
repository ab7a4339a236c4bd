//! Perturbative Lyapunov exponents of one-dimensional random Schrödinger
//! operators with correlated, strongly mixing potentials.
//!
//! The crate is organised bottom-up: [`potential`] generates the disorder,
//! [`spectral`] estimates its spectral density, [`transfer`] and [`phase`]
//! simulate transfer-matrix products and their projective phase,
//! [`fokkerplanck`] solves for the stationary phase density and evaluates the
//! Lyapunov predictors, and [`dynamics`] measures wave-packet spreading.

pub mod acceptance;
pub mod dynamics;
pub mod error;
pub mod fokkerplanck;
pub mod phase;
pub mod potential;
pub mod quad;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};
