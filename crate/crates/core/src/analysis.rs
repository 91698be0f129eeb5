//! Theoretical quantities behind the privacy/utility guarantee, and
//! brute-force checks of the preservation bounds on concrete `(X, Z)` pairs.
//!
//! Notation used below: `φ = diam(X)/l` is the diameter ratio, `ν` and `μ` the
//! projection accuracy and failure probability, `ω` the privacy threshold.
//! `C'` inflates the distance upper bound when the curator had to lift
//! singular values, `C` bounds the relative kernel distortion, and `C₁`, `C₂`
//! bound the posterior variance and mean gaps between `Z` and `X`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::curator::{compute_omega, DpParams};
use crate::error::{input_err, Error, Result};
use crate::gp::GpHyperparams;
use crate::modeler::beta_t;

/// User-facing knobs of the regret guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeParams {
    pub eps_ucb: f64,
    pub delta_ucb: f64,
    /// `L` with `|y_t| ≤ L`.
    pub output_bound: f64,
    /// `φ = diam(X) / l`.
    pub diameter_ratio: f64,
}

impl GuaranteeParams {
    pub fn new(
        eps_ucb: f64,
        delta_ucb: f64,
        output_bound: f64,
        diameter_ratio: f64,
    ) -> Result<Self> {
        let p = Self {
            eps_ucb,
            delta_ucb,
            output_bound,
            diameter_ratio,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_ucb", self.eps_ucb),
            ("output_bound", self.output_bound),
            ("diameter_ratio", self.diameter_ratio),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return input_err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.delta_ucb > 0.0 && self.delta_ucb < 1.0) {
            return input_err(format!(
                "delta_ucb must lie in (0, 1), got {}",
                self.delta_ucb
            ));
        }
        Ok(())
    }

    /// `μ = δ_ucb / 2`.
    pub fn mu(&self) -> f64 {
        self.delta_ucb / 2.0
    }

    /// `ν = min(ε_ucb / (2√3 φ² L), 2/φ², 1/2)`.
    pub fn nu(&self) -> f64 {
        let phi2 = self.diameter_ratio * self.diameter_ratio;
        (self.eps_ucb / (2.0 * 3f64.sqrt() * phi2 * self.output_bound))
            .min(2.0 / phi2)
            .min(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu: f64,
    pub nu: f64,
    pub r_min: u64,
    pub omega: f64,
    pub sigma_min: f64,
    pub lifted: bool,
    pub eps_ucb: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "C_prime")]
    pub c_prime: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    /// `(ln T)^{d+1}`; a stand-in for the maximum information gain, whose
    /// constant is unknown. Only meaningful for trends.
    #[serde(rename = "gamma_T_surrogate")]
    pub gamma_t: Option<f64>,
    pub regret_bound: Option<f64>,
}

fn projection_dim_bound(n: usize, mu: f64, nu: f64) -> f64 {
    8.0 * ((n as f64).powi(2) / mu).ln() / (nu * nu)
}

/// `⌈8 ln(n²/μ) / ν²⌉`, the projection dimension at which all pairwise
/// distances survive within `1 ± ν` with probability `1 − μ`.
pub fn min_projection_dim(n: usize, mu: f64, nu: f64) -> Result<usize> {
    if n < 2 {
        return input_err(format!("need n >= 2, got {n}"));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return input_err(format!("mu must lie in (0, 1), got {mu}"));
    }
    if !(nu > 0.0 && nu < 0.5) {
        return input_err(format!("nu must lie in (0, 1/2), got {nu}"));
    }
    Ok(projection_dim_bound(n, mu, nu).ceil() as usize)
}

/// `C' = 1 + 1{σ_min < ω} ω²/σ_min²`.
pub fn distance_inflation(omega: f64, sigma_min: f64) -> f64 {
    if sigma_min >= omega {
        1.0
    } else {
        1.0 + omega * omega / (sigma_min * sigma_min)
    }
}

/// Relative kernel distortion bound `C`.
pub fn covariance_distortion(nu: f64, diameter_ratio: f64, omega: f64, sigma_min: f64) -> f64 {
    let phi2 = diameter_ratio * diameter_ratio;
    let base = nu * phi2;
    if sigma_min >= omega {
        return base;
    }
    let q = omega * omega / (sigma_min * sigma_min);
    base.max(1.0 - (-0.5 * (nu + nu * q + q) * phi2).exp())
}

/// Posterior-variance gap constant
/// `C₁ = C σ_y √(2σ_y² + σ_n²) (√2 (1+C)² σ_y²/σ_n² + (2+C) C)`.
pub fn variance_gap_constant(c: f64, hyper: &GpHyperparams) -> f64 {
    let sv = hyper.signal_variance();
    let nv = hyper.noise_variance();
    c * sv.sqrt()
        * (2.0 * sv + nv).sqrt()
        * (2f64.sqrt() * (1.0 + c).powi(2) * sv / nv + (2.0 + c) * c)
}

/// Posterior-mean gap constant `C₂ = √2 (1+C) C σ_y²/σ_n² L`.
pub fn mean_gap_constant(c: f64, hyper: &GpHyperparams, output_bound: f64) -> f64 {
    2f64.sqrt() * (1.0 + c) * c * hyper.signal_variance() / hyper.noise_variance() * output_bound
}

/// Assembles every constant of the guarantee for a concrete release.
pub fn derive_guarantee(
    params: &GuaranteeParams,
    n: usize,
    r: usize,
    dp: &DpParams,
    sigma_min: f64,
    hyper: &GpHyperparams,
) -> Result<TheoryConstants> {
    params.validate()?;
    if n < 2 || r == 0 {
        return input_err(format!("need n >= 2 and r >= 1, got n = {n}, r = {r}"));
    }
    if sigma_min.is_nan() || sigma_min < 0.0 {
        return input_err(format!("sigma_min must be >= 0, got {sigma_min}"));
    }
    let mu = params.mu();
    let nu = params.nu();
    let omega = compute_omega(r, dp);
    let c = covariance_distortion(nu, params.diameter_ratio, omega, sigma_min);
    Ok(TheoryConstants {
        mu,
        nu,
        // ν may sit exactly on the 1/2 cap here, so skip the open-interval check.
        r_min: projection_dim_bound(n, mu, nu).ceil() as u64,
        omega,
        sigma_min,
        lifted: sigma_min < omega,
        eps_ucb: params.eps_ucb,
        c,
        c_prime: distance_inflation(omega, sigma_min),
        c1: variance_gap_constant(c, hyper),
        c2: mean_gap_constant(c, hyper, params.output_bound),
        gamma_t: None,
        regret_bound: None,
    })
}

/// `(ln T)^{d+1}`.
pub fn gamma_surrogate(horizon: usize, dim: usize) -> f64 {
    (horizon as f64).ln().powi(dim as i32 + 1)
}

/// `√(ε_ucb² + 24 (C₂ + C₁√β_T)² ln T / T + 24 β_T γ_T / (ln(1 + σ_n⁻²) T))`.
pub fn regret_bound_value(
    eps_ucb: f64,
    c1: f64,
    c2: f64,
    beta_horizon: f64,
    noise_variance: f64,
    gamma: f64,
    horizon: usize,
) -> f64 {
    let t = horizon as f64;
    let spread = c2 + c1 * beta_horizon.sqrt();
    (eps_ucb * eps_ucb
        + 24.0 * spread * spread * t.ln() / t
        + 24.0 / (1.0 + 1.0 / noise_variance).ln() * beta_horizon * gamma / t)
        .sqrt()
}

/// Simple-regret bound after `horizon` rounds on `n` candidates in `dim`
/// input dimensions, with `δ′ = δ_ucb/2` and the surrogate `γ_T`.
///
/// Refuses the lifted regime: there the `ε_ucb` term is replaced by a
/// distortion constant that cannot be chosen freely.
pub fn regret_bound(
    constants: &TheoryConstants,
    horizon: usize,
    n: usize,
    dim: usize,
    delta_ucb: f64,
    hyper: &GpHyperparams,
) -> Result<f64> {
    if constants.lifted {
        return Err(Error::Contract(format!(
            "regret bound requires sigma_min >= omega (sigma_min = {}, omega = {}); \
             in the lifted case eps_ucb is replaced by a constant that cannot be set arbitrarily",
            constants.sigma_min, constants.omega
        )));
    }
    if horizon < 1 || n < 1 {
        return input_err("horizon and n must be >= 1");
    }
    if !(delta_ucb > 0.0 && delta_ucb < 1.0) {
        return input_err(format!("delta_ucb must lie in (0, 1), got {delta_ucb}"));
    }
    let beta = beta_t(n, horizon, delta_ucb / 2.0);
    Ok(regret_bound_value(
        constants.eps_ucb,
        constants.c1,
        constants.c2,
        beta,
        hyper.noise_variance(),
        gamma_surrogate(horizon, dim),
        horizon,
    ))
}

impl TheoryConstants {
    /// Fills `gamma_T` and, outside the lifted regime, `regret_bound`.
    pub fn with_regret(
        mut self,
        horizon: usize,
        n: usize,
        dim: usize,
        delta_ucb: f64,
        hyper: &GpHyperparams,
    ) -> Result<Self> {
        self.gamma_t = Some(gamma_surrogate(horizon, dim));
        self.regret_bound = if self.lifted {
            None
        } else {
            Some(regret_bound(&self, horizon, n, dim, delta_ucb, hyper)?)
        };
        Ok(self)
    }
}

/// Largest `r ≤ r_max` whose threshold `ω` does not exceed `sigma_min`.
pub fn largest_feasible_projection_dim(
    sigma_min: f64,
    dp: &DpParams,
    r_max: usize,
) -> Option<usize> {
    (1..=r_max)
        .rev()
        .find(|&r| compute_omega(r, dp) <= sigma_min)
}

/// Smallest `ε` for which `ω(r, ε, δ) ≤ sigma_min`.
pub fn min_feasible_epsilon(sigma_min: f64, r: usize, delta: f64) -> Result<f64> {
    let unit = DpParams::new(1.0, delta)?;
    Ok(compute_omega(r, &unit) / sigma_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiameterMode {
    Exact,
    /// Lower bound from random pairs plus a farthest-point sweep.
    Sampled {
        pairs: usize,
        seed: u64,
    },
}

fn row_sq_dist(m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    m.row(i)
        .iter()
        .zip(m.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Largest pairwise Euclidean distance among the rows.
pub fn diameter(x: &DMatrix<f64>, mode: DiameterMode) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 0.0;
    }
    let best = match mode {
        DiameterMode::Exact => {
            let mut best = 0.0f64;
            for i in 0..n {
                for j in 0..i {
                    best = best.max(row_sq_dist(x, i, j));
                }
            }
            best
        }
        DiameterMode::Sampled { pairs, seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut best = 0.0f64;
            let mut anchor = 0;
            for _ in 0..pairs {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                let d = row_sq_dist(x, i, j);
                if d > best {
                    best = d;
                    anchor = i;
                }
            }
            for _ in 0..3 {
                let (far, d) = (0..n).map(|j| (j, row_sq_dist(x, anchor, j))).fold(
                    (anchor, 0.0),
                    |acc, cur| if cur.1 > acc.1 { cur } else { acc },
                );
                best = best.max(d);
                anchor = far;
            }
            best
        }
    };
    best.sqrt()
}

/// Outcome of scanning all pairs against the distance bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceCheck {
    pub pairs: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Ratio `‖z−z′‖²/‖x−x′‖²` farthest from 1 (multiplicatively).
    pub worst_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Pairs with `x = x′`; their images must coincide.
    pub zero_pairs: usize,
    pub zero_violations: usize,
}

fn check_shapes(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != z.nrows() {
        return input_err(format!(
            "row-count mismatch: X has {}, Z has {}",
            x.nrows(),
            z.nrows()
        ));
    }
    Ok(())
}

/// Checks `(1−ν)‖x−x′‖² ≤ ‖z−z′‖² ≤ (1+ν) C' ‖x−x′‖²` over all pairs.
pub fn check_distance_preservation(
    x_centered: &DMatrix<f64>,
    z: &DMatrix<f64>,
    nu: f64,
    c_prime: f64,
) -> Result<DistanceCheck> {
    check_shapes(x_centered, z)?;
    let n = x_centered.nrows();
    let z_scale = (0..n)
        .map(|i| z.row(i).norm_squared())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let lower = 1.0 - nu;
    let upper = (1.0 + nu) * c_prime;

    let mut out = DistanceCheck {
        pairs: n * (n.saturating_sub(1)) / 2,
        violations: 0,
        violation_fraction: 0.0,
        worst_ratio: 1.0,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        zero_pairs: 0,
        zero_violations: 0,
    };
    for i in 0..n {
        for j in 0..i {
            let dx = row_sq_dist(x_centered, i, j);
            let dz = row_sq_dist(z, i, j);
            if dx == 0.0 {
                out.zero_pairs += 1;
                if dz > 1e-20 * z_scale {
                    out.zero_violations += 1;
                }
                continue;
            }
            let ratio = dz / dx;
            out.min_ratio = out.min_ratio.min(ratio);
            out.max_ratio = out.max_ratio.max(ratio);
            if ratio.ln().abs() > out.worst_ratio.ln().abs() {
                out.worst_ratio = ratio;
            }
            if ratio < lower || ratio > upper {
                out.violations += 1;
            }
        }
    }
    if out.min_ratio.is_infinite() {
        out.min_ratio = 1.0;
        out.max_ratio = 1.0;
    }
    if out.pairs > 0 {
        out.violation_fraction = (out.violations + out.zero_violations) as f64 / out.pairs as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub pairs: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    pub max_relative_error: f64,
}

/// Checks `|k_zz′ − k_xx′| ≤ C k_xx′` over all pairs. Requires `ν ≤ 2/φ²`
/// with `φ` measured on `x_centered`.
pub fn check_covariance_preservation(
    x_centered: &DMatrix<f64>,
    z: &DMatrix<f64>,
    hyper: &GpHyperparams,
    c: f64,
    nu: f64,
) -> Result<CovarianceCheck> {
    check_shapes(x_centered, z)?;
    let phi = diameter(x_centered, DiameterMode::Exact) / hyper.length_scale();
    if phi > 0.0 && nu > (2.0 / (phi * phi)) * (1.0 + 1e-12) {
        return Err(Error::Contract(format!(
            "kernel distortion bound needs nu <= 2/phi^2 = {}, got nu = {nu}",
            2.0 / (phi * phi)
        )));
    }
    let n = x_centered.nrows();
    let mut out = CovarianceCheck {
        pairs: n * (n.saturating_sub(1)) / 2,
        violations: 0,
        violation_fraction: 0.0,
        max_relative_error: 0.0,
    };
    for i in 0..n {
        for j in 0..i {
            let kx = hyper.covariance_from_sq_dist(row_sq_dist(x_centered, i, j));
            let kz = hyper.covariance_from_sq_dist(row_sq_dist(z, i, j));
            let gap = (kz - kx).abs();
            out.max_relative_error = out.max_relative_error.max(gap / kx);
            if gap > c * kx {
                out.violations += 1;
            }
        }
    }
    if out.pairs > 0 {
        out.violation_fraction = out.violations as f64 / out.pairs as f64;
    }
    Ok(out)
}
