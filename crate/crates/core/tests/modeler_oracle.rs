//! GP-UCB selections against an exhaustive dense-inverse re-implementation.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use pobo_core::curator::{center_columns, InputDataset, MeasurementOracle};
use pobo_core::gp::{CandidateMatrix, GpHyperparams};
use pobo_core::modeler::{run_bo, BoConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    h.signal_variance() * (-0.5 * d2 / h.length_scale().powi(2)).exp()
}

fn reference_run(
    c: &CandidateMatrix,
    truth: &[f64],
    h: &GpHyperparams,
    horizon: usize,
    delta_prime: f64,
    exclude: bool,
) -> Vec<usize> {
    let n = c.row_count();
    let mut rows: Vec<usize> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for t in 1..=horizon {
        let beta = 2.0 * (n as f64 * (t * t) as f64 * PI * PI / (6.0 * delta_prime)).ln();
        let m = rows.len();
        let inv = if m > 0 {
            Some(
                DMatrix::from_fn(m, m, |i, j| {
                    kernel(c.row(rows[i]), c.row(rows[j]), h)
                        + if i == j { h.noise_variance() } else { 0.0 }
                })
                .try_inverse()
                .unwrap(),
            )
        } else {
            None
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for q in 0..n {
            if exclude && rows.contains(&q) {
                continue;
            }
            let (mu, var) = match &inv {
                None => (0.0, h.signal_variance()),
                Some(inv) => {
                    let kq = DVector::from_fn(m, |i, _| kernel(c.row(q), c.row(rows[i]), h));
                    let y = DVector::from_column_slice(&ys);
                    (
                        (kq.transpose() * inv * y)[(0, 0)],
                        h.signal_variance() - (kq.transpose() * inv * &kq)[(0, 0)],
                    )
                }
            };
            let score = mu + beta.sqrt() * var.max(0.0).sqrt();
            if score > best.0 {
                best = (score, q);
            }
        }
        rows.push(best.1);
        ys.push(truth[best.1]);
    }
    rows
}

#[test]
fn selections_match_exhaustive_reference() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = CandidateMatrix::from_row_major(data, 5, 2).unwrap();
        let truth: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = GpHyperparams::new(1.0, 0.8, 0.05).unwrap();
        for exclude in [false, true] {
            let cfg = BoConfig::new(3, 0.05, exclude).unwrap();
            let mut oracle = MeasurementOracle::new(truth.clone(), 0.0, seed).unwrap();
            let log = run_bo(&c, &mut oracle, &cfg, h).unwrap();
            let expected = reference_run(&c, &truth, &h, 3, 0.05, exclude);
            assert_eq!(
                log.row_indices(),
                expected,
                "seed {seed}, exclude {exclude}"
            );
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f64> = (0..60).map(|_| rng.random_range(-3.0..3.0)).collect();
    let c = CandidateMatrix::from_row_major(data, 30, 2).unwrap();
    let truth: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
    let h = GpHyperparams::new(1.0, 1.0, 0.01).unwrap();
    let cfg = BoConfig::new(12, 0.025, false).unwrap();
    let run = || {
        let mut oracle = MeasurementOracle::new(truth.clone(), 0.01, 77).unwrap();
        run_bo(&c, &mut oracle, &cfg, h).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert!(a.entries.windows(2).all(|w| w[0].beta_t <= w[1].beta_t));
}

#[test]
fn identity_release_reproduces_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..4.0)).collect();
    let x = InputDataset::from_row_major(40, 2, &data).unwrap();
    let xc = center_columns(&x);
    let truth: Vec<f64> = (0..40).map(|i| (xc[(i, 0)] - xc[(i, 1)]).cos()).collect();
    let h = GpHyperparams::new(1.0, 0.9, 1e-3).unwrap();
    let cfg = BoConfig::new(15, 0.025, true).unwrap();

    let released = CandidateMatrix::from_matrix(&xc).unwrap();
    let mut curator_side = MeasurementOracle::new(truth.clone(), 1e-3, 123).unwrap();
    let private = run_bo(&released, &mut curator_side, &cfg, h).unwrap();

    let baseline_inputs = CandidateMatrix::from_matrix(&center_columns(&x)).unwrap();
    let mut baseline_oracle = MeasurementOracle::new(truth, 1e-3, 123).unwrap();
    let baseline = run_bo(&baseline_inputs, &mut baseline_oracle, &cfg, h).unwrap();
    assert_eq!(private, baseline);
    let distinct: BTreeSet<_> = private.row_indices().into_iter().collect();
    assert_eq!(distinct.len(), 15);
}
