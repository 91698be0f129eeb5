//! The Branin-Hoo test function on its usual domain.

use std::f64::consts::PI;

use crate::grid::GridSpec;

/// `a(x₂ − b x₁² + c x₁ − r)² + s(1 − t) cos x₁ + s` with the standard
/// constants. Global minimum ≈ 0.397887 at three points.
pub fn branin_hoo(x1: f64, x2: f64) -> f64 {
    let a = 1.0;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let r = 6.0;
    let s = 10.0;
    let t = 1.0 / (8.0 * PI);
    a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s
}

/// `x₁ ∈ [−5, 10]`, `x₂ ∈ [0, 15]`.
pub fn branin_grid(points_per_dim: usize) -> crate::error::Result<GridSpec> {
    GridSpec::new(points_per_dim, vec![-5.0, 0.0], vec![10.0, 15.0])
}
