//! Modeler side: GP-UCB over a finite released candidate set.
//!
//! The modeler never sees the curator's inputs. It picks a row of the
//! candidate matrix, sends the row index, and receives a noisy measurement.
//! Running the same loop on the original inputs gives the non-private
//! baseline.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::gp::{CandidateMatrix, GpHyperparams, GpPosterior};

/// Anything that answers a measurement request for a row index.
pub trait MeasurementSource {
    fn candidate_count(&self) -> usize;
    fn measure(&mut self, row_index: usize) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub horizon: usize,
    pub delta_prime: f64,
    pub exclude_observed: bool,
}

impl BoConfig {
    pub fn new(horizon: usize, delta_prime: f64, exclude_observed: bool) -> Result<Self> {
        let cfg = Self {
            horizon,
            delta_prime,
            exclude_observed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return input_err("horizon T must be >= 1");
        }
        if !(self.delta_prime > 0.0 && self.delta_prime < 1.0) {
            return input_err(format!(
                "delta' must lie in (0, 1), got {}",
                self.delta_prime
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub row_index: usize,
    pub beta_t: f64,
    pub y_t: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    pub entries: Vec<Observation>,
}

impl ObservationLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.row_index).collect()
    }

    /// CSV with header `t,row_index,beta_t,y_t`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,row_index,beta_t,y_t\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{}", e.t, e.row_index, e.beta_t, e.y_t);
        }
        out
    }
}

/// Exploration weight `β_t = 2 ln(n t² π² / (6δ′))`.
pub fn beta_t(n: usize, t: usize, delta_prime: f64) -> f64 {
    debug_assert!(n >= 1 && t >= 1 && delta_prime > 0.0);
    let (n, t) = (n as f64, t as f64);
    2.0 * (n * t * t * PI * PI / (6.0 * delta_prime)).ln()
}

/// Smallest non-excluded index maximizing `μ + √β σ`.
pub fn ucb_select(
    state: &GpPosterior,
    candidates: &CandidateMatrix,
    beta: f64,
    excluded: &BTreeSet<usize>,
) -> Result<usize> {
    if !(beta.is_finite() && beta >= 0.0) {
        return input_err(format!("beta must be finite and >= 0, got {beta}"));
    }
    let m = candidates.row_count();
    let feasible: Vec<usize> = (0..m).filter(|i| !excluded.contains(i)).collect();
    if feasible.is_empty() {
        return input_err(format!("all {m} candidates are excluded"));
    }
    let pred = state.predict(candidates, &feasible)?;
    let root_beta = beta.sqrt();
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (k, &i) in feasible.iter().enumerate() {
        let score = pred.mean[k] + root_beta * pred.variance[k].sqrt();
        if score > best.0 {
            best = (score, i);
        }
    }
    if best.1 == usize::MAX {
        return Err(Error::Numeric(
            "acquisition produced no finite score".into(),
        ));
    }
    Ok(best.1)
}

/// Runs GP-UCB for `config.horizon` rounds. The posterior is refactored from
/// scratch after every measurement.
pub fn run_bo<S: MeasurementSource + ?Sized>(
    candidates: &CandidateMatrix,
    oracle: &mut S,
    config: &BoConfig,
    hyper: GpHyperparams,
) -> Result<ObservationLog> {
    config.validate()?;
    let n = candidates.row_count();
    if oracle.candidate_count() != n {
        return input_err(format!(
            "oracle answers for {} rows, candidate set has {n}",
            oracle.candidate_count()
        ));
    }
    if config.exclude_observed && config.horizon > n {
        return input_err(format!(
            "cannot make {} distinct queries on {n} candidates",
            config.horizon
        ));
    }

    let mut log = ObservationLog::default();
    let mut state = GpPosterior::prior(hyper, candidates);
    let mut rows = Vec::with_capacity(config.horizon);
    let mut ys = Vec::with_capacity(config.horizon);
    let mut excluded = BTreeSet::new();

    for t in 1..=config.horizon {
        let beta = beta_t(n, t, config.delta_prime);
        let pick = ucb_select(&state, candidates, beta, &excluded)?;
        let y = oracle.measure(pick)?;
        log.entries.push(Observation {
            t,
            row_index: pick,
            beta_t: beta,
            y_t: y,
        });
        rows.push(pick);
        ys.push(y);
        if config.exclude_observed {
            excluded.insert(pick);
        }
        if t < config.horizon {
            state = GpPosterior::fit(candidates, rows.clone(), ys.clone(), hyper)?;
        }
    }
    Ok(log)
}
