//! Privacy-preserving outsourced Bayesian optimization.
//!
//! A data curator holds private inputs `X` and releases a differentially
//! private random projection `Z` of them ([`curator`]). A modeler runs GP-UCB
//! on `Z` and asks the curator for measurements by row index only
//! ([`modeler`]). [`gp`] holds the Gaussian-process machinery both sides
//! share, and [`analysis`] computes the constants of the regret guarantee and
//! checks the distance and kernel preservation bounds empirically.

pub mod analysis;
pub mod curator;
mod error;
pub mod gp;
pub mod io;
pub mod modeler;

pub use error::{Error, Result};
