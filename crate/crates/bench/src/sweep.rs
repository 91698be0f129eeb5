//! Grids of `(r, ε)` settings on one objective.

use serde::{Deserialize, Serialize};

use pobo_core::curator::DpParams;

use crate::error::Result;
use crate::experiment::{run_experiment_on, ExperimentConfig, ExperimentReport, Objective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: usize,
    pub epsilon: f64,
    pub s_t_mean: f64,
    pub s_t_stderr: f64,
    pub lifted: bool,
    pub baseline_s_t_mean: f64,
}

impl SweepRow {
    fn from_report(rep: &ExperimentReport) -> Self {
        Self {
            r: rep.config.r,
            epsilon: rep.config.dp.epsilon(),
            s_t_mean: rep.private.final_mean(),
            s_t_stderr: rep.private.final_stderr(),
            lifted: rep.lifted,
            baseline_s_t_mean: rep.baseline.final_mean(),
        }
    }
}

/// Every combination of `rs` and `epsilons`, `r` outermost. The objective
/// is built once and shared, as are the per-run seeds.
pub fn run_sweep(
    base: &ExperimentConfig,
    rs: &[usize],
    epsilons: &[f64],
) -> Result<(Objective, Vec<SweepRow>)> {
    let objective = Objective::build(base)?;
    let mut rows = Vec::with_capacity(rs.len() * epsilons.len());
    for &r in rs {
        for &eps in epsilons {
            let cfg = ExperimentConfig {
                r,
                dp: DpParams::new(eps, base.dp.delta())?,
                ..base.clone()
            };
            rows.push(SweepRow::from_report(&run_experiment_on(&objective, &cfg)?));
        }
    }
    Ok((objective, rows))
}

/// CSV with header `r,epsilon,S_T_mean,S_T_stderr,lifted`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["r", "epsilon", "S_T_mean", "S_T_stderr", "lifted"])
        .expect("writing to memory");
    for row in rows {
        w.write_record([
            row.r.to_string(),
            row.epsilon.to_string(),
            row.s_t_mean.to_string(),
            row.s_t_stderr.to_string(),
            row.lifted.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}
