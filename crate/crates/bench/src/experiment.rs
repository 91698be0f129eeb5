//! Multi-run comparison of the private pipeline against the non-private
//! baseline on a fixed objective.

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pobo_core::analysis::{
    derive_guarantee, diameter, DiameterMode, GuaranteeParams, TheoryConstants,
};
use pobo_core::curator::{
    center_columns, compute_omega, dp_transform, sigma_min, DpParams, InputDataset,
    MeasurementOracle, TransformSidecar,
};
use pobo_core::gp::{covariance_matrix, is_diagonally_dominant, GpHyperparams};
use pobo_core::modeler::{run_bo, BoConfig, ObservationLog};

use crate::branin::{branin_grid, branin_hoo};
use crate::dataset::{
    fit_isotropic, fit_per_dim_lengthscales, load_csv_dataset, log_transform, preprocess_inputs,
    subtract_mean, FitGrid,
};
use crate::error::{config_err, BenchError, Result};
use crate::grid::GridSpec;
use crate::regret::{regret_metrics, RegretTrace};
use crate::stats::{mean, standard_error};
use crate::synthetic::sample_gp_on_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSource {
    /// A GP draw on a square grid `[-half_width, half_width]^dims`, with the
    /// generating kernel expressed in those raw coordinates.
    SyntheticGp {
        dims: usize,
        points_per_dim: usize,
        half_width: f64,
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
    },
    /// Negated Branin-Hoo on a grid over its usual box.
    Branin { points_per_dim: usize },
    Csv {
        path: PathBuf,
        features: Vec<String>,
        target: String,
        #[serde(default)]
        log_transform: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperSpec {
    /// Used as given, in normalized input coordinates.
    Fixed(GpHyperparams),
    /// Maximum likelihood on the preprocessed data.
    Fit,
    /// The synthetic objective's own kernel, rescaled with the inputs.
    Generating,
}

fn default_true() -> bool {
    true
}

fn default_max_norm() -> f64 {
    25.0
}

fn default_eps_ucb() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSource,
    pub hyper: HyperSpec,
    pub dp: DpParams,
    pub r: usize,
    pub horizon: usize,
    pub runs: usize,
    pub delta_ucb: f64,
    pub master_seed: u64,
    #[serde(default = "default_true")]
    pub exclude_observed: bool,
    #[serde(default = "default_max_norm")]
    pub max_norm: f64,
    /// Only feeds the reported guarantee constants.
    #[serde(default = "default_eps_ucb")]
    pub eps_ucb: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return config_err("runs must be >= 1");
        }
        if self.r == 0 {
            return config_err("r must be >= 1");
        }
        if self.horizon == 0 {
            return config_err("horizon must be >= 1");
        }
        if !(self.delta_ucb > 0.0 && self.delta_ucb < 1.0) {
            return config_err(format!(
                "delta_ucb must lie in (0, 1), got {}",
                self.delta_ucb
            ));
        }
        if !(self.max_norm.is_finite() && self.max_norm > 0.0) {
            return config_err(format!("max_norm must be > 0, got {}", self.max_norm));
        }
        if !(self.eps_ucb.is_finite() && self.eps_ucb > 0.0) {
            return config_err(format!("eps_ucb must be > 0, got {}", self.eps_ucb));
        }
        match &self.objective {
            ObjectiveSource::SyntheticGp {
                dims,
                points_per_dim,
                half_width,
                length_scale,
                signal_variance,
                noise_variance,
            } => {
                GridSpec::cube(*dims, *points_per_dim, -half_width, *half_width)?;
                GpHyperparams::new(*signal_variance, *length_scale, *noise_variance)?;
            }
            ObjectiveSource::Branin { points_per_dim } => {
                branin_grid(*points_per_dim)?;
            }
            ObjectiveSource::Csv { features, .. } => {
                if features.is_empty() {
                    return config_err("csv objective needs at least one feature column");
                }
            }
        }
        if self.hyper == HyperSpec::Generating
            && !matches!(self.objective, ObjectiveSource::SyntheticGp { .. })
        {
            return config_err("hyper = generating is only available for synthetic objectives");
        }
        Ok(())
    }

    pub fn bo_config(&self) -> Result<BoConfig> {
        Ok(BoConfig::new(
            self.horizon,
            self.delta_ucb / 2.0,
            self.exclude_observed,
        )?)
    }
}

/// Seed for stream `stream` of the master generator. Stream 0 is reserved
/// for the objective; run `k` uses stream `k + 1`.
fn stream_seeds<const N: usize>(master_seed: u64, stream: u64) -> [u64; N] {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    std::array::from_fn(|_| rng.next_u64())
}

/// Projection and oracle seeds for run `run`.
pub fn run_seeds(master_seed: u64, run: usize) -> (u64, u64) {
    let [p, o] = stream_seeds::<2>(master_seed, run as u64 + 1);
    (p, o)
}

/// The curator's normalized inputs together with the ground truth.
#[derive(Debug, Clone)]
pub struct Objective {
    pub inputs: InputDataset,
    pub truth: Vec<f64>,
    /// Model hyperparameters in normalized coordinates. The oracle uses the
    /// same noise variance.
    pub hyper: GpHyperparams,
    pub notes: Vec<String>,
}

impl Objective {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let [objective_seed] = stream_seeds::<1>(cfg.master_seed, 0);
        match &cfg.objective {
            ObjectiveSource::SyntheticGp {
                dims,
                points_per_dim,
                half_width,
                length_scale,
                signal_variance,
                noise_variance,
            } => {
                let spec = GridSpec::cube(*dims, *points_per_dim, -half_width, *half_width)?;
                let generating =
                    GpHyperparams::new(*signal_variance, *length_scale, *noise_variance)?;
                let truth = sample_gp_on_grid(&spec, &generating, objective_seed)?;
                let raw = InputDataset::new(spec.points())?;
                let (inputs, _) = preprocess_inputs(&raw, None, cfg.max_norm, None, false)?;
                let scale = inputs.rows().amax() / raw.rows().amax();
                let hyper = match cfg.hyper {
                    HyperSpec::Fixed(h) => h,
                    HyperSpec::Generating => generating.with_length_scale(length_scale * scale)?,
                    HyperSpec::Fit => {
                        fit_isotropic(inputs.rows(), &truth, &fit_grid(objective_seed))?
                    }
                };
                Ok(Self {
                    inputs,
                    truth,
                    hyper,
                    notes: vec![format!(
                        "inputs scaled by {scale} to max norm {}",
                        cfg.max_norm
                    )],
                })
            }
            ObjectiveSource::Branin { points_per_dim } => {
                let pts = branin_grid(*points_per_dim)?.points();
                let y: Vec<f64> = (0..pts.nrows())
                    .map(|i| -branin_hoo(pts[(i, 0)], pts[(i, 1)]))
                    .collect();
                Self::from_table(
                    cfg,
                    InputDataset::new(pts)?,
                    log_transform(&y),
                    objective_seed,
                )
            }
            ObjectiveSource::Csv {
                path,
                features,
                target,
                log_transform: log_y,
            } => {
                let (x, y) = load_csv_dataset(path, features, target)?;
                let y = if *log_y { log_transform(&y) } else { y };
                Self::from_table(cfg, x, y, objective_seed)
            }
        }
    }

    /// Tabular preprocessing: per-column lengthscales, division, max-norm
    /// scaling, then an isotropic refit. Targets are centered.
    fn from_table(cfg: &ExperimentConfig, x: InputDataset, y: Vec<f64>, seed: u64) -> Result<Self> {
        let y = subtract_mean(&y);
        let grid = fit_grid(seed);
        let mut notes = vec!["targets centered to zero mean".to_string()];
        let (inputs, hyper) = match cfg.hyper {
            HyperSpec::Fixed(h) => {
                let (inputs, _) = preprocess_inputs(&x, None, cfg.max_norm, None, false)?;
                (inputs, h)
            }
            HyperSpec::Fit => {
                let ls = fit_per_dim_lengthscales(x.rows(), &y, &grid)?;
                notes.push(format!(
                    "per-dimension lengthscales {ls:?} divided out before max-norm scaling; \
                     isotropic hyperparameters refit afterwards"
                ));
                let (inputs, _) = preprocess_inputs(&x, Some(&ls), cfg.max_norm, None, false)?;
                let hyper = fit_isotropic(inputs.rows(), &y, &grid)?;
                (inputs, hyper)
            }
            HyperSpec::Generating => unreachable!("rejected by validate"),
        };
        Ok(Self {
            inputs,
            truth: y,
            hyper,
            notes,
        })
    }

    pub fn sigma_y(&self) -> f64 {
        self.hyper.signal_variance().sqrt()
    }
}

fn fit_grid(seed: u64) -> FitGrid {
    FitGrid {
        seed,
        ..FitGrid::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub projection_seed: u64,
    pub oracle_seed: u64,
    pub transform: TransformSidecar,
    pub private_log: ObservationLog,
    pub baseline_log: ObservationLog,
    pub private: RegretTrace,
    pub baseline: RegretTrace,
    /// Whether the covariance of the private arm's first `t` picks, measured
    /// on the original inputs, is diagonally dominant.
    pub dominance: Vec<bool>,
}

/// One private run and its matched baseline. Both arms see the same oracle
/// seed, so they differ only in which inputs the modeler works with.
pub fn run_single(objective: &Objective, cfg: &ExperimentConfig, run: usize) -> Result<RunOutcome> {
    let wrap = |e: BenchError| BenchError::Run {
        run,
        source: Box::new(e),
    };
    run_single_inner(objective, cfg, run).map_err(wrap)
}

fn run_single_inner(
    objective: &Objective,
    cfg: &ExperimentConfig,
    run: usize,
) -> Result<RunOutcome> {
    let (projection_seed, oracle_seed) = run_seeds(cfg.master_seed, run);
    let bo = cfg.bo_config()?;
    let noise = objective.hyper.noise_variance();

    let released = dp_transform(&objective.inputs, cfg.dp, cfg.r, projection_seed)?;
    let mut oracle = MeasurementOracle::new(objective.truth.clone(), noise, oracle_seed)?;
    let private_log = run_bo(&released.candidates(), &mut oracle, &bo, objective.hyper)?;

    let mut oracle = MeasurementOracle::new(objective.truth.clone(), noise, oracle_seed)?;
    let baseline_log = run_bo(
        &objective.inputs.candidates(),
        &mut oracle,
        &bo,
        objective.hyper,
    )?;

    let original = objective.inputs.candidates();
    let picks = private_log.row_indices();
    let dominance = (1..=picks.len())
        .map(|t| {
            let k = covariance_matrix(&original, &picks[..t], &objective.hyper)?;
            Ok(is_diagonally_dominant(&k)?)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RunOutcome {
        run,
        projection_seed,
        oracle_seed,
        transform: released.sidecar(),
        private: regret_metrics(&private_log, &objective.truth)?,
        baseline: regret_metrics(&baseline_log, &objective.truth)?,
        private_log,
        baseline_log,
        dominance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_simple_regret: Vec<f64>,
    pub stderr: Vec<f64>,
    /// The same series divided by `σ_y`.
    pub mean_simple_regret_sigma_y: Vec<f64>,
    pub stderr_sigma_y: Vec<f64>,
}

impl ArmSummary {
    fn from_traces(traces: &[&RegretTrace], sigma_y: f64) -> Self {
        let horizon = traces[0].simple_by_t.len();
        let mut mean_simple_regret = Vec::with_capacity(horizon);
        let mut stderr = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let at_t: Vec<f64> = traces.iter().map(|tr| tr.simple_by_t[t]).collect();
            mean_simple_regret.push(mean(&at_t));
            stderr.push(standard_error(&at_t));
        }
        Self {
            mean_simple_regret_sigma_y: mean_simple_regret.iter().map(|v| v / sigma_y).collect(),
            stderr_sigma_y: stderr.iter().map(|v| v / sigma_y).collect(),
            mean_simple_regret,
            stderr,
        }
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean_simple_regret.last().expect("horizon >= 1")
    }

    pub fn final_stderr(&self) -> f64 {
        *self.stderr.last().expect("horizon >= 1")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub projection_seed: u64,
    pub oracle_seed: u64,
    pub lifted: bool,
    pub private_final_simple_regret: f64,
    pub baseline_final_simple_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub d: usize,
    pub hyper: GpHyperparams,
    pub sigma_y: f64,
    pub sigma_min: f64,
    pub omega: f64,
    pub lifted: bool,
    /// Fraction of runs whose first `t` private picks give a diagonally
    /// dominant covariance on the original inputs, per `t`.
    pub dominance_fraction: Vec<f64>,
    pub private: ArmSummary,
    pub baseline: ArmSummary,
    pub runs: Vec<RunSummary>,
    pub theory: Option<TheoryConstants>,
    /// Why `theory` is missing, when it is.
    pub theory_note: Option<String>,
    pub notes: Vec<String>,
}

/// Builds the objective and runs the full experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let objective = Objective::build(cfg)?;
    run_experiment_on(&objective, cfg)
}

/// Runs every seed on an already built objective. Runs execute on the
/// current rayon pool; results are gathered in run order.
pub fn run_experiment_on(
    objective: &Objective,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let outcomes = (0..cfg.runs)
        .into_par_iter()
        .map(|run| run_single(objective, cfg, run))
        .collect::<Result<Vec<_>>>()?;
    aggregate(objective, cfg, &outcomes)
}

fn theory_for(
    objective: &Objective,
    cfg: &ExperimentConfig,
    sigma_min: f64,
) -> std::result::Result<TheoryConstants, String> {
    let x = objective.inputs.rows();
    let mode = if x.nrows() <= 20_000 {
        DiameterMode::Exact
    } else {
        DiameterMode::Sampled {
            pairs: 200_000,
            seed: cfg.master_seed,
        }
    };
    let phi = diameter(x, mode) / objective.hyper.length_scale();
    let bound = objective.truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let params = GuaranteeParams::new(
        cfg.eps_ucb,
        cfg.delta_ucb,
        bound.max(f64::MIN_POSITIVE),
        phi,
    )
    .map_err(|e| e.to_string())?;
    derive_guarantee(
        &params,
        x.nrows(),
        cfg.r,
        &cfg.dp,
        sigma_min,
        &objective.hyper,
    )
    .and_then(|c| {
        c.with_regret(
            cfg.horizon,
            x.nrows(),
            x.ncols(),
            cfg.delta_ucb,
            &objective.hyper,
        )
    })
    .map_err(|e| e.to_string())
}

fn aggregate(
    objective: &Objective,
    cfg: &ExperimentConfig,
    outcomes: &[RunOutcome],
) -> Result<ExperimentReport> {
    let sigma_y = objective.sigma_y();
    let sigma_min = sigma_min(&center_columns(&objective.inputs))?;
    let omega = compute_omega(cfg.r, &cfg.dp);
    let lifted = sigma_min < omega;
    let horizon = cfg.horizon;
    let runs = outcomes.len() as f64;

    let dominance_fraction = (0..horizon)
        .map(|t| outcomes.iter().filter(|o| o.dominance[t]).count() as f64 / runs)
        .collect();
    let private: Vec<&RegretTrace> = outcomes.iter().map(|o| &o.private).collect();
    let baseline: Vec<&RegretTrace> = outcomes.iter().map(|o| &o.baseline).collect();
    let run_summaries = outcomes
        .iter()
        .map(|o| RunSummary {
            run: o.run,
            projection_seed: o.projection_seed,
            oracle_seed: o.oracle_seed,
            lifted: o.transform.lifted,
            private_final_simple_regret: o.private.final_simple().unwrap_or(f64::NAN),
            baseline_final_simple_regret: o.baseline.final_simple().unwrap_or(f64::NAN),
        })
        .collect();
    let (theory, theory_note) = match theory_for(objective, cfg, sigma_min) {
        Ok(c) => {
            let note = c
                .regret_bound
                .is_none()
                .then(|| "regret bound omitted: release was lifted".to_string());
            (Some(c), note)
        }
        Err(e) => (None, Some(e)),
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        n: objective.inputs.n(),
        d: objective.inputs.d(),
        hyper: objective.hyper,
        sigma_y,
        sigma_min,
        omega,
        lifted,
        dominance_fraction,
        private: ArmSummary::from_traces(&private, sigma_y),
        baseline: ArmSummary::from_traces(&baseline, sigma_y),
        runs: run_summaries,
        theory,
        theory_note,
        notes: objective.notes.clone(),
    })
}
