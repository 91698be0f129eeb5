//! Benchmark harness: objectives, preprocessing, multi-run regret
//! comparison between the private pipeline and the non-private baseline,
//! and `(r, ε)` sweeps.

pub mod branin;
pub mod dataset;
mod error;
pub mod experiment;
pub mod grid;
pub mod profiles;
pub mod regret;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod synthetic;

pub use error::{BenchError, Result};
