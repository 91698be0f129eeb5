//! CSV ingestion, input normalization and hyperparameter fitting for tabular
//! objectives.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use pobo_core::curator::InputDataset;
use pobo_core::gp::{fit_hyperparams, CandidateMatrix, GpHyperparams};

use crate::error::{BenchError, Result};

/// Reads the named feature columns and target column from a headed CSV.
/// Rows are numbered from 1, counting data rows only.
pub fn load_csv_dataset(
    path: &Path,
    feature_columns: &[String],
    target_column: &str,
) -> Result<(InputDataset, Vec<f64>)> {
    let schema = |message: String| BenchError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| schema(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(format!("missing column '{name}'")))
    };
    if feature_columns.is_empty() {
        return Err(schema("no feature columns requested".into()));
    }
    let feature_idx = feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let target_idx = find(target_column)?;

    let mut data = Vec::new();
    let mut targets = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| schema(format!("row {row}: {e}")))?;
        let parse = |idx: usize, column: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| BenchError::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: column.to_string(),
                    value: raw.to_string(),
                })
        };
        for (&idx, name) in feature_idx.iter().zip(feature_columns) {
            data.push(parse(idx, name)?);
        }
        targets.push(parse(target_idx, target_column)?);
    }
    let n = targets.len();
    let x = InputDataset::from_row_major(n, feature_columns.len(), &data)?;
    Ok((x, targets))
}

/// Inverse of [`load_csv_dataset`]: a header row, then one line per input.
pub fn dataset_to_csv(
    x: &DMatrix<f64>,
    feature_columns: &[String],
    targets: &[f64],
    target_column: &str,
) -> Result<String> {
    if feature_columns.len() != x.ncols() || targets.len() != x.nrows() {
        return Err(BenchError::Config(format!(
            "shape mismatch: {}x{} inputs, {} names, {} targets",
            x.nrows(),
            x.ncols(),
            feature_columns.len(),
            targets.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = feature_columns.iter().map(String::as_str).collect();
    header.push(target_column);
    w.write_record(&header).expect("writing to memory");
    for (row, target) in x.row_iter().zip(targets) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(target.to_string());
        w.write_record(&rec).expect("writing to memory");
    }
    Ok(String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8"))
}

/// `ln(y − min y + 1)` if any value is non-positive, else `ln y`.
pub fn log_transform(y: &[f64]) -> Vec<f64> {
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        y.iter().map(|v| (v - min + 1.0).ln()).collect()
    } else {
        y.iter().map(|v| v.ln()).collect()
    }
}

/// Divides columns by their lengthscales, rescales so the largest row norm
/// equals `max_norm`, and optionally log-transforms the targets.
pub fn preprocess_inputs(
    x: &InputDataset,
    per_dim_lengthscales: Option<&[f64]>,
    max_norm: f64,
    y: Option<&[f64]>,
    log_transform_targets: bool,
) -> Result<(InputDataset, Option<Vec<f64>>)> {
    if !(max_norm.is_finite() && max_norm > 0.0) {
        return Err(BenchError::Config(format!(
            "max_norm must be > 0, got {max_norm}"
        )));
    }
    let mut m = x.rows().clone();
    if let Some(ls) = per_dim_lengthscales {
        if ls.len() != x.d() {
            return Err(BenchError::Config(format!(
                "{} lengthscales for {} columns",
                ls.len(),
                x.d()
            )));
        }
        for (j, &l) in ls.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(BenchError::Config(format!(
                    "lengthscale {j} must be > 0, got {l}"
                )));
            }
            m.column_mut(j).unscale_mut(l);
        }
    }
    let largest = (0..m.nrows()).map(|i| m.row(i).norm()).fold(0.0, f64::max);
    if largest == 0.0 {
        return Err(pobo_core::Error::Input("every row is zero; cannot normalize".into()).into());
    }
    m *= max_norm / largest;
    let mut out = InputDataset::new(m)?;
    if let Some(ids) = x.row_ids() {
        out = out.with_row_ids(ids.to_vec())?;
    }
    let targets = y.map(|y| {
        if log_transform_targets {
            log_transform(y)
        } else {
            y.to_vec()
        }
    });
    Ok((out, targets))
}

pub fn subtract_mean(y: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(y);
    y.iter().map(|v| v - m).collect()
}

fn sample_variance(y: &[f64]) -> f64 {
    let m = crate::stats::mean(y);
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.len().max(2) - 1) as f64
}

fn geometric(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
        .collect()
}

/// Search space for maximum-likelihood fitting, relative to data scales.
#[derive(Debug, Clone)]
pub struct FitGrid {
    /// Multiples of the target sample variance.
    pub signal_factors: Vec<f64>,
    pub noise_factors: Vec<f64>,
    /// Multiples of the input diameter bound (largest row norm times 2).
    pub length_factors: Vec<f64>,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self {
            signal_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            noise_factors: vec![1e-6, 1e-4, 1e-3, 1e-2, 1e-1],
            length_factors: geometric(0.01, 1.0, 15),
            subsample: 300,
            seed: 0,
        }
    }
}

fn subsample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn scale_of(x: &DMatrix<f64>) -> f64 {
    2.0 * (0..x.nrows()).map(|i| x.row(i).norm()).fold(0.0, f64::max)
}

/// Isotropic SE hyperparameters by grid maximum likelihood on a subsample.
pub fn fit_isotropic(x: &DMatrix<f64>, y: &[f64], grid: &FitGrid) -> Result<GpHyperparams> {
    let rows = subsample_rows(x.nrows(), grid.subsample, grid.seed);
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let var = sample_variance(&ys).max(1e-12);
    let scale = scale_of(x).max(1e-12);
    let mut candidates = Vec::new();
    for &s in &grid.signal_factors {
        for &l in &grid.length_factors {
            for &nf in &grid.noise_factors {
                candidates.push(GpHyperparams::new(s * var, l * scale, nf * var)?);
            }
        }
    }
    let cands = CandidateMatrix::from_matrix(x)?;
    Ok(fit_hyperparams(&cands, &rows, &ys, &candidates)?)
}

/// Per-column lengthscales by coordinate-wise grid maximum likelihood:
/// each sweep refits one column's scale with the others held fixed.
pub fn fit_per_dim_lengthscales(x: &DMatrix<f64>, y: &[f64], grid: &FitGrid) -> Result<Vec<f64>> {
    let d = x.ncols();
    let spans: Vec<f64> = (0..d)
        .map(|j| {
            let c = x.column(j);
            (c.max() - c.min()).max(1e-12)
        })
        .collect();
    let mut ls: Vec<f64> = spans.iter().map(|s| 0.25 * s).collect();
    let unit_grid = FitGrid {
        length_factors: vec![1.0],
        ..grid.clone()
    };
    let mut best_lml = f64::NEG_INFINITY;
    for _sweep in 0..2 {
        for j in 0..d {
            for &f in &grid.length_factors {
                let mut trial = ls.clone();
                trial[j] = f * 2.0 * spans[j];
                let scaled = rescaled(x, &trial);
                // With columns divided by their lengthscales the isotropic
                // lengthscale is pinned to 1.
                let lml = unit_lml(&scaled, y, &unit_grid)?;
                if lml > best_lml {
                    best_lml = lml;
                    ls = trial;
                }
            }
        }
    }
    Ok(ls)
}

fn rescaled(x: &DMatrix<f64>, ls: &[f64]) -> DMatrix<f64> {
    let mut m = x.clone();
    for (j, l) in ls.iter().enumerate() {
        m.column_mut(j).unscale_mut(*l);
    }
    m
}

fn unit_lml(x: &DMatrix<f64>, y: &[f64], grid: &FitGrid) -> Result<f64> {
    let rows = subsample_rows(x.nrows(), grid.subsample, grid.seed);
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let var = sample_variance(&ys).max(1e-12);
    let cands = CandidateMatrix::from_matrix(x)?;
    let mut best = f64::NEG_INFINITY;
    for &s in &grid.signal_factors {
        for &nf in &grid.noise_factors {
            let h = GpHyperparams::new(s * var, 1.0, nf * var)?;
            if let Ok(v) = pobo_core::gp::log_marginal_likelihood(&cands, &rows, &ys, &h) {
                best = best.max(v);
            }
        }
    }
    Ok(best)
}
