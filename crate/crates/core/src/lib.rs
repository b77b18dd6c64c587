//! Simulation and parameter estimation for optically driven diamond Lamb wave
//! resonators coupled to silicon-vacancy centres.
//!
//! All quantities are SI internally: metres, kilograms, seconds, and angular
//! frequencies in rad/s. Cyclic frequencies (Hz) appear only at I/O boundaries.

pub mod bessel;
pub mod bloch_bands;
pub mod constants;
pub mod elastic_modes;
pub mod error;
pub mod fitting;
pub mod gradient_drive;
pub mod ode;
pub mod qed_designer;
pub mod quadrature;
pub mod siv_spectroscopy;
pub mod spectrum;

pub use error::{Error, Result};
