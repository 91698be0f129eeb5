use serde::{Deserialize, Serialize};

use pobo_core::modeler::ObservationLog;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    /// `f(x*) − f(x_t)` per round.
    pub instantaneous: Vec<f64>,
    pub cumulative: f64,
    /// Running minimum of `instantaneous`.
    pub simple_by_t: Vec<f64>,
}

impl RegretTrace {
    pub fn final_simple(&self) -> Option<f64> {
        self.simple_by_t.last().copied()
    }
}

/// Regret against the noiseless objective values, not the measured `y_t`.
pub fn regret_metrics(log: &ObservationLog, truth: &[f64]) -> Result<RegretTrace> {
    let best = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if truth.is_empty() || !best.is_finite() {
        return Err(pobo_core::Error::Input("truth must be non-empty and finite".into()).into());
    }
    let mut instantaneous = Vec::with_capacity(log.len());
    for e in &log.entries {
        let f = truth.get(e.row_index).ok_or_else(|| {
            pobo_core::Error::Input(format!(
                "round {} selected row {} but truth has {} rows",
                e.t,
                e.row_index,
                truth.len()
            ))
        })?;
        instantaneous.push(best - f);
    }
    let simple_by_t = instantaneous
        .iter()
        .scan(f64::INFINITY, |m, &r| {
            *m = m.min(r);
            Some(*m)
        })
        .collect();
    Ok(RegretTrace {
        cumulative: instantaneous.iter().sum(),
        instantaneous,
        simple_by_t,
    })
}
