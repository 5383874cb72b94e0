//! Precision bounds, optimal protocols and estimators for Ramsey
//! interferometry with a quadratic (J_z^2) signal under collective
//! Gaussian dephasing.
//!
//! Layout:
//! - [`noise_model`]: spectra, the decay coefficient kappa(t), trajectories.
//! - [`dicke_engine`]: exact Dicke-basis states, propagation and QFI.
//! - [`closed_form`]: analytic moments and uncertainties for CSS and Phi.
//! - [`gaussian_hp`]: Holstein-Primakoff phase-space treatment of squeezed states.
//! - [`estimation`]: shot sampling, moment and ratio estimators.
//! - [`optimizer`]: protocol optimization, scaling fits and the summary table.
//! - [`cli`]: JSON-config driven command line front end.

// Negated comparisons are used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod closed_form;
pub mod dicke_engine;
pub mod error;
pub mod estimation;
pub mod gaussian_hp;
pub mod noise_model;
pub(crate) mod numerics;
pub mod optimizer;

pub use error::{Error, Result};
