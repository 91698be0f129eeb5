//! Ready-made experiment configurations.

use pobo_core::curator::DpParams;

use crate::experiment::{ExperimentConfig, HyperSpec, ObjectiveSource};

/// Raw half-width of the synthetic grid. The objective is drawn with
/// lengthscale 1.25 in these coordinates before inputs are rescaled.
pub const SYNTHETIC_HALF_WIDTH: f64 = 3.0;

fn synthetic(points_per_dim: usize, epsilon: f64, runs: usize) -> ExperimentConfig {
    ExperimentConfig {
        objective: ObjectiveSource::SyntheticGp {
            dims: 2,
            points_per_dim,
            half_width: SYNTHETIC_HALF_WIDTH,
            length_scale: 1.25,
            signal_variance: 1.0,
            noise_variance: 1e-5,
        },
        hyper: HyperSpec::Generating,
        dp: DpParams::new(epsilon, 1e-5).expect("valid constants"),
        r: 10,
        horizon: 50,
        runs,
        delta_ucb: 0.05,
        master_seed: 20_190_101,
        exclude_observed: true,
        max_norm: 25.0,
        eps_ucb: 0.1,
    }
}

/// 50 × 50 grid, 10 runs, at `ε = e^1.8`, the largest level on the
/// [`EPSILON_LEVELS_QUICK`] ladder that needs no lifting at `r = 10`.
pub fn synthetic_quick() -> ExperimentConfig {
    synthetic(50, 1.8f64.exp(), 10)
}

/// 100 × 100 grid, 50 runs, at `ε = e^1.1`.
pub fn synthetic_full() -> ExperimentConfig {
    synthetic(100, 1.1f64.exp(), 50)
}

/// Exponents of the `ε` ladder for the quick synthetic profile.
pub const EPSILON_LEVELS_QUICK: [f64; 4] = [0.0, 0.9, 1.8, 2.5];

/// 31 × 31 Branin grid with fitted hyperparameters at `ε = e^2.5`, the
/// smallest level on [`EPSILON_LEVELS_BRANIN`] that needs no lifting.
pub fn branin_default() -> ExperimentConfig {
    ExperimentConfig {
        objective: ObjectiveSource::Branin { points_per_dim: 31 },
        hyper: HyperSpec::Fit,
        dp: DpParams::new(2.5f64.exp(), 1e-3).expect("valid constants"),
        r: 10,
        horizon: 50,
        runs: 50,
        delta_ucb: 0.05,
        master_seed: 20_190_101,
        exclude_observed: true,
        max_norm: 25.0,
        eps_ucb: 0.1,
    }
}

/// Exponents of the `ε` ladder for the Branin profile.
pub const EPSILON_LEVELS_BRANIN: [f64; 5] = [1.8, 2.0, 2.3, 2.5, 2.7];

/// Projection dimensions swept at a fixed `ε`.
pub const R_LEVELS: [usize; 5] = [2, 5, 10, 15, 20];
