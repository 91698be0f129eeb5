//! Cholesky-based GP inference against a dense-inverse transcription of the
//! posterior equations.

use nalgebra::{DMatrix, DVector};
use pobo_core::gp::{
    fit_hyperparams, log_marginal_likelihood, CandidateMatrix, GpHyperparams, GpPosterior,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    h.signal_variance() * (-0.5 * d2 / h.length_scale().powi(2)).exp()
}

/// Mean and variance with an explicit matrix inverse.
fn dense_posterior(
    c: &CandidateMatrix,
    rows: &[usize],
    ys: &[f64],
    h: &GpHyperparams,
    q: usize,
) -> (f64, f64) {
    let t = rows.len();
    let k = DMatrix::from_fn(t, t, |i, j| {
        kernel(c.row(rows[i]), c.row(rows[j]), h) + if i == j { h.noise_variance() } else { 0.0 }
    });
    let inv = k.try_inverse().expect("K + noise is invertible");
    let kq = DVector::from_fn(t, |i, _| kernel(c.row(q), c.row(rows[i]), h));
    let y = DVector::from_column_slice(ys);
    let mean = (kq.transpose() * &inv * y)[(0, 0)];
    let var = h.signal_variance() - (kq.transpose() * &inv * &kq)[(0, 0)];
    (mean, var)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_matches_dense_inverse(
        m in 1usize..=12,
        dim in 1usize..=3,
        t in 0usize..=8,
        seed in any::<u64>(),
        sv in 0.3f64..3.0,
        l in 0.3f64..3.0,
        nv in 0.01f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = CandidateMatrix::from_row_major(data, m, dim).unwrap();
        let h = GpHyperparams::new(sv, l, nv).unwrap();
        let rows: Vec<usize> = (0..t).map(|_| rng.random_range(0..m)).collect();
        let ys: Vec<f64> = (0..t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let post = GpPosterior::fit(&c, rows.clone(), ys.clone(), h).unwrap();
        let all: Vec<usize> = (0..m).collect();
        let p = post.predict(&c, &all).unwrap();
        for q in 0..m {
            let (mean, var) = if t == 0 { (0.0, sv) } else { dense_posterior(&c, &rows, &ys, &h, q) };
            prop_assert!((p.mean[q] - mean).abs() <= 1e-8, "mean {} vs {}", p.mean[q], mean);
            prop_assert!((p.variance[q] - var.max(0.0)).abs() <= 1e-8, "var {} vs {}", p.variance[q], var);
            prop_assert!(p.variance[q] >= 0.0 && p.variance[q] <= sv + 1e-10);
        }
    }
}

/// Exact GP draw at arbitrary points via a dense Cholesky.
fn sample_gp(points: &CandidateMatrix, h: &GpHyperparams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.row_count();
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel(points.row(i), points.row(j), h) + if i == j { 1e-10 } else { 0.0 }
    });
    let l = k.cholesky().expect("jittered kernel matrix is PD").unpack();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (l * z).iter().copied().collect()
}

#[test]
fn grid_mle_recovers_generating_hyperparams() {
    let truth = GpHyperparams::new(1.0, 1.25, 1e-5).unwrap();
    let mut grid = Vec::new();
    for sv in [0.25, 1.0, 4.0] {
        for l in [0.5, 1.25, 3.0] {
            for nv in [1e-5, 1e-3, 1e-1] {
                grid.push(GpHyperparams::new(sv, l, nv).unwrap());
            }
        }
    }
    let trials = 100;
    let mut hits = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + trial);
        let data: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..5.0)).collect();
        let pts = CandidateMatrix::from_row_major(data, 40, 2).unwrap();
        let f = sample_gp(&pts, &truth, &mut rng);
        let y: Vec<f64> = f
            .iter()
            .map(|v| v + truth.noise_variance().sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let rows: Vec<usize> = (0..40).collect();
        let got = fit_hyperparams(&pts, &rows, &y, &grid).unwrap();

        // Exhaustive scan as the oracle for what the argmax should be.
        let scan = grid
            .iter()
            .map(|h| log_marginal_likelihood(&pts, &rows, &y, h).unwrap_or(f64::NEG_INFINITY))
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, v)| if v > b.1 { (i, v) } else { b },
            );
        assert_eq!(got, grid[scan.0]);
        if got == truth {
            hits += 1;
        }
    }
    assert!(
        hits as f64 / trials as f64 > 0.8,
        "recovered truth in {hits}/{trials}"
    );
}

#[test]
fn lml_drops_for_implausible_observations() {
    let h = GpHyperparams::new(1.0, 1.0, 0.01).unwrap();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let pts = CandidateMatrix::from_row_major(data, 12, 2).unwrap();
        let f = sample_gp(&pts, &h, &mut rng);
        let rows: Vec<usize> = (0..12).collect();
        let base = log_marginal_likelihood(&pts, &rows, &f, &h).unwrap();
        let post = GpPosterior::fit(&pts, rows[..6].to_vec(), f[..6].to_vec(), h).unwrap();
        let pred = post.predict(&pts, &rows[6..]).unwrap();
        let mut shifted = f.clone();
        for (k, mu) in pred.mean.iter().enumerate() {
            shifted[6 + k] = mu + 10.0 * h.signal_variance().sqrt();
        }
        let worse = log_marginal_likelihood(&pts, &rows, &shifted, &h).unwrap();
        assert!(worse < base, "seed {seed}: {worse} >= {base}");
    }
}
