//! Gaussian-process regression with the isotropic squared-exponential kernel.
//!
//! The prior mean is fixed at zero. Every linear solve goes through a Cholesky
//! factor of `K + σ_n² I`; when that matrix is numerically indefinite a small
//! diagonal jitter ladder is tried before giving up.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter levels (times the signal variance) tried after a plain
/// factorization fails.
const JITTER_LADDER: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Kernel and likelihood parameters `(σ_y², l, σ_n²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperparams")]
pub struct GpHyperparams {
    signal_variance: f64,
    length_scale: f64,
    noise_variance: f64,
}

#[derive(Deserialize)]
struct RawHyperparams {
    signal_variance: f64,
    length_scale: f64,
    noise_variance: f64,
}

impl TryFrom<RawHyperparams> for GpHyperparams {
    type Error = Error;

    fn try_from(raw: RawHyperparams) -> Result<Self> {
        GpHyperparams::new(raw.signal_variance, raw.length_scale, raw.noise_variance)
    }
}

impl GpHyperparams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        for (name, v) in [
            ("signal_variance", signal_variance),
            ("length_scale", length_scale),
            ("noise_variance", noise_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return input_err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        Ok(Self {
            signal_variance,
            length_scale,
            noise_variance,
        })
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Same parameters with a different length-scale.
    pub fn with_length_scale(&self, length_scale: f64) -> Result<Self> {
        Self::new(self.signal_variance, length_scale, self.noise_variance)
    }

    /// Covariance as a function of squared distance.
    #[inline]
    pub fn covariance_from_sq_dist(&self, sq_dist: f64) -> f64 {
        self.signal_variance * (-0.5 * sq_dist / (self.length_scale * self.length_scale)).exp()
    }
}

/// Finite candidate inputs, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl CandidateMatrix {
    pub fn from_row_major(data: Vec<f64>, rows: usize, dim: usize) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return input_err(format!(
                "candidate matrix must be non-empty, got {rows}x{dim}"
            ));
        }
        if data.len() != rows * dim {
            return input_err(format!(
                "candidate buffer has {} entries, expected {rows}x{dim}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return input_err(format!(
                "non-finite candidate entry at row {}, column {}",
                pos / dim,
                pos % dim
            ));
        }
        Ok(Self { data, rows, dim })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, dim) = m.shape();
        let mut data = Vec::with_capacity(rows * dim);
        for i in 0..rows {
            data.extend(m.row(i).iter().copied());
        }
        Self::from_row_major(data, rows, dim)
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.dim, &self.data)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.rows {
            return input_err(format!(
                "row index {i} out of range for {} candidates",
                self.rows
            ));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `σ_y² exp(−½‖a−b‖²/l²)`.
pub fn se_covariance(a: &[f64], b: &[f64], hyper: &GpHyperparams) -> Result<f64> {
    if a.len() != b.len() {
        return input_err(format!("dimension mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return input_err("non-finite kernel argument");
    }
    Ok(hyper.covariance_from_sq_dist(sq_dist(a, b)))
}

/// Prior covariance among the given candidate rows (no noise term).
pub fn covariance_matrix(
    candidates: &CandidateMatrix,
    rows: &[usize],
    hyper: &GpHyperparams,
) -> Result<DMatrix<f64>> {
    for &i in rows {
        candidates.check_index(i)?;
    }
    let m = rows.len();
    let mut k = DMatrix::zeros(m, m);
    for a in 0..m {
        k[(a, a)] = hyper.signal_variance;
        for b in 0..a {
            let v = hyper
                .covariance_from_sq_dist(sq_dist(candidates.row(rows[a]), candidates.row(rows[b])));
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// Lower Cholesky factor of `k`, retrying with diagonal jitter relative to
/// `scale`. Returns the factor and the jitter that was added.
pub(crate) fn cholesky_with_jitter(k: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = k.clone().cholesky() {
        return Ok((c.unpack(), 0.0));
    }
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Ok((c.unpack(), jitter));
        }
    }
    Err(Error::Numeric(format!(
        "{}x{} covariance not positive definite after jitter {:e}",
        k.nrows(),
        k.ncols(),
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
    )))
}

/// Posterior mean and variance at a set of query rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Fitted GP state over the rows observed so far.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    hyper: GpHyperparams,
    observed_rows: Vec<usize>,
    observations: Vec<f64>,
    factor: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    candidate_rows: usize,
}

impl GpPosterior {
    /// Prior state: nothing observed yet.
    pub fn prior(hyper: GpHyperparams, candidates: &CandidateMatrix) -> Self {
        Self {
            hyper,
            observed_rows: Vec::new(),
            observations: Vec::new(),
            factor: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            jitter: 0.0,
            candidate_rows: candidates.row_count(),
        }
    }

    /// Conditions the prior on `observations` taken at `observed_rows`.
    pub fn fit(
        candidates: &CandidateMatrix,
        observed_rows: Vec<usize>,
        observations: Vec<f64>,
        hyper: GpHyperparams,
    ) -> Result<Self> {
        if observed_rows.len() != observations.len() {
            return input_err(format!(
                "{} observed rows but {} observations",
                observed_rows.len(),
                observations.len()
            ));
        }
        if let Some(y) = observations.iter().find(|y| !y.is_finite()) {
            return input_err(format!("non-finite observation {y}"));
        }
        let mut k = covariance_matrix(candidates, &observed_rows, &hyper)?;
        for i in 0..k.nrows() {
            k[(i, i)] += hyper.noise_variance;
        }
        let (factor, jitter) = cholesky_with_jitter(&k, hyper.signal_variance)?;
        let y = DVector::from_column_slice(&observations);
        let alpha = solve_cholesky(&factor, &y);
        Ok(Self {
            hyper,
            observed_rows,
            observations,
            factor,
            alpha,
            jitter,
            candidate_rows: candidates.row_count(),
        })
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn observed_rows(&self) -> &[usize] {
        &self.observed_rows
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    /// Lower-triangular factor of `K + σ_n² I` (+ jitter).
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance at `query` rows of `candidates`.
    pub fn predict(&self, candidates: &CandidateMatrix, query: &[usize]) -> Result<Prediction> {
        if candidates.row_count() != self.candidate_rows {
            return input_err(format!(
                "posterior was fitted on {} candidates, got {}",
                self.candidate_rows,
                candidates.row_count()
            ));
        }
        for &q in query {
            candidates.check_index(q)?;
        }
        let sv = self.hyper.signal_variance;
        let t = self.observed_rows.len();
        if t == 0 {
            return Ok(Prediction {
                mean: vec![0.0; query.len()],
                variance: vec![sv; query.len()],
            });
        }

        let mut cross = DMatrix::zeros(t, query.len());
        for (c, &q) in query.iter().enumerate() {
            let xq = candidates.row(q);
            for (r, &o) in self.observed_rows.iter().enumerate() {
                cross[(r, c)] = self
                    .hyper
                    .covariance_from_sq_dist(sq_dist(xq, candidates.row(o)));
            }
        }
        let mean = (cross.transpose() * &self.alpha).iter().copied().collect();
        let v = self
            .factor
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        let variance = v
            .column_iter()
            .map(|col| (sv - col.norm_squared()).clamp(0.0, sv))
            .collect();
        Ok(Prediction { mean, variance })
    }
}

fn solve_cholesky(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let w = l
        .solve_lower_triangular(y)
        .expect("factor has positive diagonal");
    l.transpose()
        .solve_upper_triangular(&w)
        .expect("factor has positive diagonal")
}

/// Log marginal likelihood of the observations under a zero-mean GP.
pub fn log_marginal_likelihood(
    candidates: &CandidateMatrix,
    observed_rows: &[usize],
    observations: &[f64],
    hyper: &GpHyperparams,
) -> Result<f64> {
    if observed_rows.is_empty() {
        return input_err("log marginal likelihood needs at least one observation");
    }
    let post = GpPosterior::fit(
        candidates,
        observed_rows.to_vec(),
        observations.to_vec(),
        *hyper,
    )?;
    let t = observations.len() as f64;
    let fit: f64 = post
        .alpha
        .iter()
        .zip(observations)
        .map(|(a, y)| a * y)
        .sum();
    let log_det_half: f64 = post.factor.diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * fit - log_det_half - 0.5 * t * LN_2PI)
}

/// Grid-search maximum-likelihood hyperparameters. Ties go to the earliest
/// grid entry; entries whose factorization fails are skipped.
pub fn fit_hyperparams(
    candidates: &CandidateMatrix,
    observed_rows: &[usize],
    observations: &[f64],
    grid: &[GpHyperparams],
) -> Result<GpHyperparams> {
    if grid.is_empty() {
        return input_err("hyperparameter grid is empty");
    }
    if observed_rows.len() < 2 {
        return input_err("hyperparameter fitting needs at least two observations");
    }
    let mut best: Option<(f64, GpHyperparams)> = None;
    let mut last_err = None;
    for h in grid {
        match log_marginal_likelihood(candidates, observed_rows, observations, h) {
            Ok(lml) => {
                if best.is_none_or(|(b, _)| lml > b) {
                    best = Some((lml, *h));
                }
            }
            Err(e @ Error::Numeric(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.map(|(_, h)| h).ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Numeric("no grid entry could be evaluated".into()))
    })
}

/// Diagonal dominance: `K_ii ≥ (√(m−1) + 1) Σ_{j≠i} K_ij` for every row.
pub fn is_diagonally_dominant(k: &DMatrix<f64>) -> Result<bool> {
    let (m, c) = k.shape();
    if m != c {
        return input_err(format!("covariance must be square, got {m}x{c}"));
    }
    for i in 0..m {
        for j in 0..i {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-10 {
                return input_err(format!("covariance not symmetric at ({i}, {j})"));
            }
        }
    }
    let factor = ((m.saturating_sub(1)) as f64).sqrt() + 1.0;
    Ok((0..m).all(|i| {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
        k[(i, i)] >= factor * off
    }))
}
