//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line
//! straight to stderr, so the lines show up even when output is captured.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pobo_bench::experiment::{run_experiment_on, run_single, ExperimentConfig, Objective};
use pobo_bench::profiles::{
    branin_default, synthetic_quick, EPSILON_LEVELS_BRANIN, EPSILON_LEVELS_QUICK, R_LEVELS,
};
use pobo_bench::stats::spearman;
use pobo_core::analysis::{
    check_covariance_preservation, check_distance_preservation, derive_guarantee, diameter,
    min_projection_dim, regret_bound, DiameterMode, GuaranteeParams,
};
use pobo_core::curator::{
    center_columns, compute_omega, dp_transform, lift_singular_values, sigma_min, DpParams,
    InputDataset,
};
use pobo_core::gp::{CandidateMatrix, GpHyperparams, GpPosterior};
use pobo_core::modeler::beta_t;

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance {id:>2}] {status} {name} ({:.2}s): {detail}",
        elapsed.as_secs_f64()
    );
}

fn check(id: u32, name: &str, limit: Duration, start: Instant, pass: bool, detail: String) {
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; over the {}s budget", limit.as_secs())
    };
    verdict(id, name, pass && in_time, elapsed, detail.clone());
    assert!(pass && in_time, "acceptance {id} failed: {detail}");
}

fn kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    h.signal_variance() * (-0.5 * d2 / h.length_scale().powi(2)).exp()
}

#[test]
fn acceptance_01_posterior_matches_dense_inverse() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..=12);
        let dim = rng.random_range(1..=4);
        let t = rng.random_range(1..=8);
        let data: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = CandidateMatrix::from_row_major(data, m, dim).unwrap();
        let h = GpHyperparams::new(
            rng.random_range(0.2..4.0),
            rng.random_range(0.2..3.0),
            rng.random_range(1e-3..1.0),
        )
        .unwrap();
        let rows: Vec<usize> = (0..t).map(|_| rng.random_range(0..m)).collect();
        let ys: Vec<f64> = (0..t)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let post = GpPosterior::fit(&c, rows.clone(), ys.clone(), h).unwrap();
        let all: Vec<usize> = (0..m).collect();
        let pred = post.predict(&c, &all).unwrap();

        let k = DMatrix::from_fn(t, t, |i, j| {
            kernel(c.row(rows[i]), c.row(rows[j]), &h)
                + if i == j { h.noise_variance() } else { 0.0 }
        });
        let inv = k.try_inverse().unwrap();
        let y = DVector::from_vec(ys);
        for q in 0..m {
            let kq = DVector::from_fn(t, |i, _| kernel(c.row(q), c.row(rows[i]), &h));
            let mean = (kq.transpose() * &inv * &y)[(0, 0)];
            let var = h.signal_variance() - (kq.transpose() * &inv * &kq)[(0, 0)];
            worst = worst
                .max((pred.mean[q] - mean).abs())
                .max((pred.variance[q] - var).abs());
        }
    }
    check(
        1,
        "posterior vs dense inverse",
        Duration::from_secs(5),
        start,
        worst <= 1e-8,
        format!("max abs error {worst:.3e} over 100 instances (limit 1e-8)"),
    );
}

// Second transcriptions of the closed-form quantities, written independently
// of the library code.

fn omega_ref(r: f64, eps: f64, delta: f64) -> f64 {
    let a = (r * (2.0 / delta).ln()).sqrt();
    let b = (16.0 * r / delta).ln();
    16.0 * a * b / eps
}

fn beta_ref(n: f64, t: f64, delta_prime: f64) -> f64 {
    2.0 * (n.ln() + 2.0 * t.ln() + 2.0 * PI.ln() - 6f64.ln() - delta_prime.ln())
}

fn rmin_real_ref(n: f64, mu: f64, nu: f64) -> f64 {
    8.0 * (2.0 * n.ln() - mu.ln()) / nu.powi(2)
}

struct GuaranteeRef {
    nu: f64,
    c: f64,
    c_prime: f64,
    c1: f64,
    c2: f64,
}

#[allow(clippy::too_many_arguments)]
fn guarantee_ref(
    eps_ucb: f64,
    l_out: f64,
    phi: f64,
    omega: f64,
    smin: f64,
    sv: f64,
    nv: f64,
) -> GuaranteeRef {
    let nu = [
        eps_ucb / (2.0 * 3f64.sqrt() * phi.powi(2) * l_out),
        2.0 / phi.powi(2),
        0.5,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let lifted = smin < omega;
    let ratio = if lifted { (omega / smin).powi(2) } else { 0.0 };
    let c_prime = 1.0 + ratio;
    let c = if lifted {
        let alt = 1.0 - (-(nu + nu * ratio + ratio) * phi.powi(2) / 2.0).exp();
        (nu * phi.powi(2)).max(alt)
    } else {
        nu * phi.powi(2)
    };
    let sy = sv.sqrt();
    let c1 = c
        * sy
        * (2.0 * sv + nv).sqrt()
        * (2f64.sqrt() * (1.0 + c).powi(2) * sv / nv + (2.0 + c) * c);
    let c2 = 2f64.sqrt() * (1.0 + c) * c * (sv / nv) * l_out;
    GuaranteeRef {
        nu,
        c,
        c_prime,
        c1,
        c2,
    }
}

fn bound_ref(eps_ucb: f64, c1: f64, c2: f64, beta: f64, nv: f64, horizon: f64, dim: i32) -> f64 {
    let gamma = horizon.ln().powi(dim + 1);
    let a = eps_ucb.powi(2);
    let b = 24.0 * (c2 + c1 * beta.sqrt()).powi(2) * horizon.ln() / horizon;
    let c = 24.0 * beta * gamma / ((1.0 + nv.recip()).ln() * horizon);
    (a + b + c).sqrt()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn acceptance_02_formula_transcriptions_agree() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut rmin_mismatch = 0;
    let mut bounds_checked = 0;
    for _ in 0..1000 {
        let r = rng.random_range(1..2000usize);
        let eps = rng.random_range(-2.0f64..5.0).exp();
        let delta = rng.random_range(-14.0f64..-0.5).exp();
        let dp = DpParams::new(eps, delta).unwrap();
        worst = worst.max(rel(compute_omega(r, &dp), omega_ref(r as f64, eps, delta)));

        let n = rng.random_range(1..1_000_000usize);
        let t = rng.random_range(1..500usize);
        let dprime = rng.random_range(1e-6..0.999);
        worst = worst.max(rel(
            beta_t(n, t, dprime),
            beta_ref(n as f64, t as f64, dprime),
        ));

        let n2 = rng.random_range(2..100_000usize);
        let mu = rng.random_range(1e-4..0.999);
        let nu = rng.random_range(0.01..0.499);
        let real = rmin_real_ref(n2 as f64, mu, nu);
        let got = min_projection_dim(n2, mu, nu).unwrap();
        // Only a sub-ulp difference sitting exactly on an integer may round apart.
        if got as f64 != real.ceil() && (real - real.round()).abs() > 1e-9 * real {
            rmin_mismatch += 1;
        }

        let eps_ucb = rng.random_range(1e-3..1.0);
        let delta_ucb = rng.random_range(1e-3..0.999);
        let l_out = rng.random_range(0.1..10.0);
        let phi = rng.random_range(0.1..20.0);
        let sv = rng.random_range(0.1..5.0);
        let nv = rng.random_range(1e-6..1.0);
        let ls = rng.random_range(0.1..5.0);
        let hyper = GpHyperparams::new(sv, ls, nv).unwrap();
        let omega = compute_omega(r, &dp);
        let smin = omega * rng.random_range(0.1..3.0);
        let params = GuaranteeParams::new(eps_ucb, delta_ucb, l_out, phi).unwrap();
        let got = derive_guarantee(&params, n2, r, &dp, smin, &hyper).unwrap();
        let want = guarantee_ref(eps_ucb, l_out, phi, omega, smin, sv, nv);
        for (a, b) in [
            (got.nu, want.nu),
            (got.mu, delta_ucb / 2.0),
            (got.c, want.c),
            (got.c_prime, want.c_prime),
            (got.c1, want.c1),
            (got.c2, want.c2),
            (got.omega, omega),
        ] {
            worst = worst.max(rel(a, b));
        }
        let horizon = rng.random_range(2..500usize);
        let dim = rng.random_range(1..6usize);
        if !got.lifted {
            let b = regret_bound(&got, horizon, n2, dim, delta_ucb, &hyper).unwrap();
            let beta = beta_ref(n2 as f64, horizon as f64, delta_ucb / 2.0);
            let w = bound_ref(
                eps_ucb,
                want.c1,
                want.c2,
                beta,
                nv,
                horizon as f64,
                dim as i32,
            );
            worst = worst.max(rel(b, w));
            bounds_checked += 1;
        } else {
            assert!(regret_bound(&got, horizon, n2, dim, delta_ucb, &hyper).is_err());
        }
    }
    check(
        2,
        "closed forms vs second transcription",
        Duration::from_secs(5),
        start,
        worst <= 1e-12 && rmin_mismatch == 0 && bounds_checked > 100,
        format!(
            "max relative error {worst:.3e} (limit 1e-12), {rmin_mismatch} r_min mismatches, \
             {bounds_checked} regret bounds compared"
        ),
    );
}

fn random_inputs(n: usize, d: usize, scale: f64, seed: u64) -> InputDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    InputDataset::from_row_major(n, d, &data).unwrap()
}

#[test]
fn acceptance_03_pairwise_distances_survive_projection() {
    let start = Instant::now();
    let (mu, nu) = (0.1, 0.4);
    let r = min_projection_dim(30, mu, nu).unwrap();
    let x = random_inputs(30, 6, 100.0, 3);
    let xc = center_columns(&x);
    let dp = DpParams::new(1e3, 1e-5).unwrap();
    let seeds = 500;
    let mut failing = 0;
    for s in 0..seeds {
        let t = dp_transform(&x, dp, r, s).unwrap();
        assert!(!t.lifted(), "setup must avoid lifting");
        if check_distance_preservation(&xc, t.rows(), nu, 1.0)
            .unwrap()
            .violations
            > 0
        {
            failing += 1;
        }
    }
    let freq = failing as f64 / seeds as f64;
    check(
        3,
        "distance preservation frequency",
        Duration::from_secs(30),
        start,
        freq <= 0.13,
        format!("r = {r}, {failing}/{seeds} seeds with a violation ({freq:.3}, limit 0.13)"),
    );
}

#[test]
fn acceptance_04_kernel_distortion_bound() {
    let start = Instant::now();
    let (mu, nu) = (0.1, 0.4);
    let r = min_projection_dim(30, mu, nu).unwrap();
    let x = random_inputs(30, 6, 100.0, 4);
    let xc = center_columns(&x);
    let diam = diameter(&xc, DiameterMode::Exact);
    // φ = 2 gives 2/φ² = 0.5 ≥ ν.
    let hyper = GpHyperparams::new(1.0, diam / 2.0, 1e-3).unwrap();
    let phi = diam / hyper.length_scale();
    let c = nu * phi * phi;
    let dp = DpParams::new(1e3, 1e-5).unwrap();
    let seeds = 500;
    let mut failing = 0;
    for s in 0..seeds {
        let t = dp_transform(&x, dp, r, s).unwrap();
        assert!(!t.lifted());
        if check_covariance_preservation(&xc, t.rows(), &hyper, c, nu)
            .unwrap()
            .violations
            > 0
        {
            failing += 1;
        }
    }
    let freq = failing as f64 / seeds as f64;
    check(
        4,
        "kernel distortion frequency",
        Duration::from_secs(30),
        start,
        freq <= mu + 0.03,
        format!("phi = {phi:.3}, C = {c:.3}, {failing}/{seeds} seeds with a violation ({freq:.3}, limit 0.13)"),
    );
}

#[test]
fn acceptance_05_lifting_clears_threshold() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shortfall: f64 = 0.0;
    let mut identity_err: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(d.max(2)..=d + 10);
        let scale = rng.random_range(-2.0f64..3.0).exp();
        let x = DMatrix::from_fn(n, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let omega = rng.random_range(0.0..5.0) * scale;
        let lifted = lift_singular_values(&x, omega).unwrap();
        shortfall = shortfall.max(omega - sigma_min(&lifted).unwrap());
        let same = lift_singular_values(&x, 0.0).unwrap();
        identity_err = identity_err.max((same - &x).amax());
    }
    check(
        5,
        "singular-value lifting",
        Duration::from_secs(10),
        start,
        shortfall <= 1e-9 && identity_err <= 1e-9,
        format!(
            "max (omega - sigma_min) {shortfall:.3e}, omega = 0 max deviation {identity_err:.3e}"
        ),
    );
}

fn with_epsilon(cfg: &ExperimentConfig, exponent: f64, r: usize) -> ExperimentConfig {
    ExperimentConfig {
        dp: DpParams::new(exponent.exp(), cfg.dp.delta()).unwrap(),
        r,
        ..cfg.clone()
    }
}

#[test]
fn acceptance_06_private_matches_baseline_when_unlifted() {
    let start = Instant::now();
    let cfg = synthetic_quick();
    let obj = Objective::build(&cfg).unwrap();
    let rep = run_experiment_on(&obj, &cfg).unwrap();
    assert!(!rep.lifted, "profile epsilon must be feasible");
    let gap = (rep.private.final_mean() - rep.baseline.final_mean()) / rep.sigma_y;
    check(
        6,
        "synthetic private vs baseline",
        Duration::from_secs(600),
        start,
        gap.abs() <= 0.10,
        format!(
            "eps = {:.3}, S_50 private {:.4} vs baseline {:.4}, gap {gap:.4} sigma_y (limit 0.10)",
            cfg.dp.epsilon(),
            rep.private.final_mean(),
            rep.baseline.final_mean()
        ),
    );
}

#[test]
fn acceptance_07_largest_feasible_r_is_near_best() {
    let start = Instant::now();
    let base = synthetic_quick();
    let obj = Objective::build(&base).unwrap();
    let exponent = base.dp.epsilon().ln();
    let mut rows = Vec::new();
    for &r in &R_LEVELS {
        let rep = run_experiment_on(&obj, &with_epsilon(&base, exponent, r)).unwrap();
        rows.push((r, rep.lifted, rep.private.final_mean() / rep.sigma_y));
    }
    let best_feasible = rows
        .iter()
        .filter(|(_, lifted, _)| !lifted)
        .max_by_key(|(r, _, _)| *r)
        .copied();
    let min = rows.iter().map(|row| row.2).fold(f64::INFINITY, f64::min);
    let (pass, detail) = match best_feasible {
        Some((r, _, s)) => (
            s <= min + 0.05,
            format!(
                "largest feasible r = {r} with S_50 {s:.4} sigma_y, best {min:.4}; sweep {rows:?}"
            ),
        ),
        None => (false, format!("no swept r is feasible: {rows:?}")),
    };
    check(7, "r sweep", Duration::from_secs(1800), start, pass, detail);
}

#[test]
fn acceptance_08_branin_private_regret() {
    let start = Instant::now();
    let base = ExperimentConfig {
        runs: 10,
        ..branin_default()
    };
    let obj = Objective::build(&base).unwrap();
    let smin = sigma_min(&center_columns(&obj.inputs)).unwrap();
    let exponent = EPSILON_LEVELS_BRANIN
        .iter()
        .copied()
        .find(|&e| compute_omega(10, &DpParams::new(e.exp(), base.dp.delta()).unwrap()) <= smin);
    let (pass, detail) = match exponent {
        Some(e) => {
            let rep = run_experiment_on(&obj, &with_epsilon(&base, e, 10)).unwrap();
            let s = rep.private.final_mean() / rep.sigma_y;
            (
                !rep.lifted && s <= 0.10,
                format!(
                    "eps = e^{e}, S_50 private {s:.4} sigma_y, baseline {:.4} sigma_y (limit 0.10)",
                    rep.baseline.final_mean() / rep.sigma_y
                ),
            )
        }
        None => (
            false,
            format!("no ladder epsilon is feasible (sigma_min {smin:.2})"),
        ),
    };
    check(
        8,
        "Branin private regret",
        Duration::from_secs(300),
        start,
        pass,
        detail,
    );
}

#[test]
fn acceptance_09_release_invariant_to_feasible_epsilon() {
    let start = Instant::now();
    let cfg = synthetic_quick();
    let obj = Objective::build(&cfg).unwrap();
    let smin = sigma_min(&center_columns(&obj.inputs)).unwrap();
    let (lo, hi) = (1.8, 2.5);
    let a_cfg = with_epsilon(&cfg, lo, cfg.r);
    let b_cfg = with_epsilon(&cfg, hi, cfg.r);
    let feasible =
        compute_omega(cfg.r, &a_cfg.dp) <= smin && compute_omega(cfg.r, &b_cfg.dp) <= smin;
    let mut identical = true;
    for run in 0..3 {
        let za = dp_transform(&obj.inputs, a_cfg.dp, cfg.r, 1000 + run).unwrap();
        let zb = dp_transform(&obj.inputs, b_cfg.dp, cfg.r, 1000 + run).unwrap();
        let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        identical &= bits(za.rows()) == bits(zb.rows());
        let la = run_single(&obj, &a_cfg, run as usize).unwrap();
        let lb = run_single(&obj, &b_cfg, run as usize).unwrap();
        identical &= la.private_log == lb.private_log;
    }
    check(
        9,
        "feasible epsilon invariance",
        Duration::from_secs(60),
        start,
        feasible && identical,
        format!("eps e^{lo} and e^{hi} both feasible: {feasible}; Z and logs bit-identical: {identical}"),
    );
}

#[test]
fn acceptance_10_regret_falls_as_epsilon_grows() {
    let start = Instant::now();
    let base = synthetic_quick();
    let obj = Objective::build(&base).unwrap();
    let mut eps = Vec::new();
    let mut s = Vec::new();
    let mut lifted = Vec::new();
    for &e in &EPSILON_LEVELS_QUICK {
        let rep = run_experiment_on(&obj, &with_epsilon(&base, e, base.r)).unwrap();
        eps.push(e.exp());
        s.push(rep.private.final_mean() / rep.sigma_y);
        lifted.push(rep.lifted);
    }
    let rho = spearman(&eps, &s);
    let spans = lifted.iter().any(|&l| l) && lifted.iter().any(|&l| !l);
    check(
        10,
        "privacy-utility direction",
        Duration::from_secs(600),
        start,
        spans && rho <= 0.0,
        format!("spearman {rho:.3} (limit <= 0), S_50/sigma_y {s:.4?}, lifted {lifted:?}"),
    );
}
