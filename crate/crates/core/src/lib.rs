//! Qubit noise spectroscopy with random π-pulse sequences.
//!
//! The crate designs ensembles of random ±1 filter functions whose expected
//! window matches a target spectral weighting, simulates the dephasing
//! measurement protocol, reconstructs sparse spectra by LASSO, and provides a
//! CPMG sweep baseline.

pub mod cli;
pub mod cpmg;
pub mod csrecon;
pub mod error;
pub mod experiment;
pub mod io;
pub mod numeric;
pub mod presets;
pub mod pulse;
pub mod rng;
pub mod seqgen;
pub mod spectra;

pub use error::{Error, Result};
