//! Regular grids over axis-aligned boxes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridSpec {
    pub fn new(points_per_dim: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let spec = Self {
            points_per_dim,
            lower,
            upper,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same bounds on every axis.
    pub fn cube(dims: usize, points_per_dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(points_per_dim, vec![lower; dims], vec![upper; dims])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return config_err(format!(
                "grid bounds need matching non-empty lengths, got {} and {}",
                self.lower.len(),
                self.upper.len()
            ));
        }
        if self.points_per_dim < 2 {
            return config_err("grid needs at least 2 points per dimension");
        }
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return config_err(format!(
                    "axis {j}: need finite lower < upper, got [{lo}, {hi}]"
                ));
            }
        }
        if self
            .points_per_dim
            .checked_pow(self.dims() as u32)
            .is_none()
        {
            return config_err("grid is too large");
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn total_points(&self) -> usize {
        self.points_per_dim.pow(self.dims() as u32)
    }

    /// Evenly spaced coordinates along axis `j`, endpoints included.
    pub fn axis(&self, j: usize) -> Vec<f64> {
        let p = self.points_per_dim;
        let (lo, hi) = (self.lower[j], self.upper[j]);
        (0..p)
            .map(|k| lo + (hi - lo) * k as f64 / (p - 1) as f64)
            .collect()
    }

    /// All grid points as rows. The first axis varies slowest.
    pub fn points(&self) -> DMatrix<f64> {
        let d = self.dims();
        let p = self.points_per_dim;
        let axes: Vec<Vec<f64>> = (0..d).map(|j| self.axis(j)).collect();
        DMatrix::from_fn(self.total_points(), d, |i, j| {
            let k = (i / p.pow((d - 1 - j) as u32)) % p;
            axes[j][k]
        })
    }
}
