//! Data-owner side of the protocol.
//!
//! The curator centers its private inputs, draws a Gaussian projection, lifts
//! the singular values of the centered data up to the privacy threshold `ω`
//! when they fall short of it, and releases the projected rows. Afterwards it
//! answers measurement requests that name nothing but a row index.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::gp::CandidateMatrix;
use crate::modeler::MeasurementSource;

/// Privacy budget `(ε, δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDpParams")]
pub struct DpParams {
    epsilon: f64,
    delta: f64,
}

#[derive(Deserialize)]
struct RawDpParams {
    epsilon: f64,
    delta: f64,
}

impl TryFrom<RawDpParams> for DpParams {
    type Error = Error;

    fn try_from(raw: RawDpParams) -> Result<Self> {
        DpParams::new(raw.epsilon, raw.delta)
    }
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return input_err(format!("epsilon must be finite and > 0, got {epsilon}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return input_err(format!("delta must lie in (0, 1), got {delta}"));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// The curator's private `n × d` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDataset {
    rows: DMatrix<f64>,
    row_ids: Option<Vec<String>>,
}

impl InputDataset {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        let (n, d) = rows.shape();
        if n < 2 || d < 1 {
            return input_err(format!("dataset needs n >= 2 and d >= 1, got {n}x{d}"));
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            // column-major position
            return input_err(format!(
                "non-finite entry at row {}, column {}",
                pos % n,
                pos / n
            ));
        }
        Ok(Self {
            rows,
            row_ids: None,
        })
    }

    pub fn from_row_major(n: usize, d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * d {
            return input_err(format!("{} values cannot fill {n}x{d}", data.len()));
        }
        Self::new(DMatrix::from_row_slice(n, d, data))
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows.nrows() {
            return input_err(format!(
                "{} row ids for {} rows",
                ids.len(),
                self.rows.nrows()
            ));
        }
        self.row_ids = Some(ids);
        Ok(self)
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn row_ids(&self) -> Option<&[String]> {
        self.row_ids.as_deref()
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn candidates(&self) -> CandidateMatrix {
        CandidateMatrix::from_matrix(&self.rows).expect("validated on construction")
    }
}

/// Subtracts each column's mean.
pub fn center_columns(x: &InputDataset) -> DMatrix<f64> {
    let mut out = x.rows.clone();
    let n = out.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Privacy threshold `ω = 16 √(r ln(2/δ)) ε⁻¹ ln(16r/δ)`.
pub fn compute_omega(r: usize, dp: &DpParams) -> f64 {
    let r = r as f64;
    16.0 * (r * (2.0 / dp.delta).ln()).sqrt() / dp.epsilon * (16.0 * r / dp.delta).ln()
}

/// Thin SVD of a finite matrix.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let iters = 200 * m.nrows().max(m.ncols()).max(10);
        let svd = m
            .clone()
            .try_svd(true, true, f64::EPSILON, iters)
            .ok_or_else(|| {
                Error::Numeric(format!(
                    "SVD of {}x{} did not converge",
                    m.nrows(),
                    m.ncols()
                ))
            })?;
        Ok(Self {
            u: svd.u.expect("requested"),
            singular_values: svd.singular_values,
            v_t: svd.v_t.expect("requested"),
        })
    }

    /// Smallest of the `min(n, d)` singular values.
    pub fn sigma_min(&self) -> f64 {
        self.singular_values.min()
    }

    fn recompose_with(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.column_iter_mut().zip(values.iter()) {
            col *= *s;
        }
        us * &self.v_t
    }
}

/// Smallest singular value of a matrix.
pub fn sigma_min(m: &DMatrix<f64>) -> Result<f64> {
    Ok(ThinSvd::new(m)?.sigma_min())
}

/// Replaces every singular value `σ` of `xc` by `√(σ² + ω²)`, keeping the
/// singular vectors.
pub fn lift_singular_values(xc: &DMatrix<f64>, omega: f64) -> Result<DMatrix<f64>> {
    if !(omega.is_finite() && omega >= 0.0) {
        return input_err(format!("omega must be finite and >= 0, got {omega}"));
    }
    if xc.iter().any(|v| !v.is_finite()) {
        return input_err("matrix to lift has non-finite entries");
    }
    let svd = ThinSvd::new(xc)?;
    Ok(lift_from_svd(&svd, omega))
}

fn lift_from_svd(svd: &ThinSvd, omega: f64) -> DMatrix<f64> {
    let lifted = svd.singular_values.map(|s| (s * s + omega * omega).sqrt());
    svd.recompose_with(&lifted)
}

/// `d × r` matrix of i.i.d. standard normals, filled row by row from a
/// ChaCha20 stream keyed by `seed`.
pub fn gaussian_projection(d: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..d * r)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DMatrix::from_row_slice(d, r, &data)
}

/// The released matrix `Z` and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedDataset {
    rows: DMatrix<f64>,
    d: usize,
    dp: DpParams,
    omega: f64,
    lifted: bool,
    sigma_min: f64,
    projection_seed: u64,
}

/// JSON companion written next to a released CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSidecar {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub omega: f64,
    pub sigma_min: f64,
    pub lifted: bool,
    pub projection_seed: u64,
}

impl TransformedDataset {
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn r(&self) -> usize {
        self.rows.ncols()
    }

    pub fn source_dim(&self) -> usize {
        self.d
    }

    pub fn dp(&self) -> DpParams {
        self.dp
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn lifted(&self) -> bool {
        self.lifted
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn projection_seed(&self) -> u64 {
        self.projection_seed
    }

    pub fn candidates(&self) -> CandidateMatrix {
        CandidateMatrix::from_matrix(&self.rows).expect("projection of finite data is finite")
    }

    pub fn sidecar(&self) -> TransformSidecar {
        TransformSidecar {
            n: self.n(),
            d: self.d,
            r: self.r(),
            epsilon: self.dp.epsilon,
            delta: self.dp.delta,
            omega: self.omega,
            sigma_min: self.sigma_min,
            lifted: self.lifted,
            projection_seed: self.projection_seed,
        }
    }

    /// Headerless CSV, one released row per line.
    pub fn to_csv(&self) -> String {
        crate::io::matrix_to_csv(&self.rows)
    }
}

/// Runs the full curator transform: center, project, and lift if needed.
pub fn dp_transform(
    x: &InputDataset,
    dp: DpParams,
    r: usize,
    seed: u64,
) -> Result<TransformedDataset> {
    if r == 0 {
        return input_err("projection dimension r must be >= 1");
    }
    let xc = center_columns(x);
    let m = gaussian_projection(x.d(), r, seed);
    let svd = ThinSvd::new(&xc)?;
    let omega = compute_omega(r, &dp);
    let sigma_min = svd.sigma_min();
    let lifted = sigma_min < omega;
    let source = if lifted {
        lift_from_svd(&svd, omega)
    } else {
        xc
    };
    let rows = (source * m) / (r as f64).sqrt();
    Ok(TransformedDataset {
        rows,
        d: x.d(),
        dp,
        omega,
        lifted,
        sigma_min,
        projection_seed: seed,
    })
}

/// Answers `f(x_i) + N(0, σ_n²)` for a requested row index.
#[derive(Debug, Clone)]
pub struct MeasurementOracle {
    truth: Vec<f64>,
    noise_variance: f64,
    seed: u64,
    rng: ChaCha20Rng,
}

impl MeasurementOracle {
    pub fn new(truth: Vec<f64>, noise_variance: f64, seed: u64) -> Result<Self> {
        if truth.is_empty() {
            return input_err("oracle needs at least one ground-truth value");
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return input_err(format!("noise variance must be >= 0, got {noise_variance}"));
        }
        if truth.iter().any(|v| !v.is_finite()) {
            return input_err("ground truth contains non-finite values");
        }
        Ok(Self {
            truth,
            noise_variance,
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn answer_query(&mut self, row_index: usize) -> Result<f64> {
        let Some(&f) = self.truth.get(row_index) else {
            return input_err(format!(
                "row index {row_index} out of range for {} rows",
                self.truth.len()
            ));
        };
        let z: f64 = StandardNormal.sample(&mut self.rng);
        Ok(f + self.noise_variance.sqrt() * z)
    }
}

impl MeasurementSource for MeasurementOracle {
    fn candidate_count(&self) -> usize {
        self.truth.len()
    }

    fn measure(&mut self, row_index: usize) -> Result<f64> {
        self.answer_query(row_index)
    }
}

/// Copy of `x` with one row moved by `magnitude · direction`.
pub fn make_neighbor(
    x: &InputDataset,
    row_index: usize,
    direction: &[f64],
    magnitude: f64,
) -> Result<InputDataset> {
    if row_index >= x.n() {
        return input_err(format!(
            "row index {row_index} out of range for {} rows",
            x.n()
        ));
    }
    if direction.len() != x.d() {
        return input_err(format!(
            "direction has {} entries, dataset has d = {}",
            direction.len(),
            x.d()
        ));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return input_err(format!("direction must be a unit vector, norm is {norm}"));
    }
    if !(0.0..=1.0).contains(&magnitude) {
        return input_err(format!("magnitude must lie in [0, 1], got {magnitude}"));
    }
    let mut rows = x.rows.clone();
    for (j, v) in direction.iter().enumerate() {
        rows[(row_index, j)] += magnitude * v;
    }
    Ok(InputDataset {
        rows,
        row_ids: x.row_ids.clone(),
    })
}
