//! `pobo`: transform datasets, run outsourced BO sessions, benchmark, and
//! check preservation bounds from the command line.

use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use pobo_bench::dataset::{fit_isotropic, preprocess_inputs, FitGrid};
use pobo_bench::experiment::{run_experiment_on, run_seeds, ExperimentConfig, Objective};
use pobo_bench::profiles;
use pobo_bench::regret::regret_metrics;
use pobo_bench::report::report_csv;
use pobo_bench::sweep::{run_sweep, sweep_csv};
use pobo_bench::BenchError;
use pobo_core::analysis::{
    check_covariance_preservation, check_distance_preservation, derive_guarantee, diameter,
    DiameterMode, GuaranteeParams,
};
use pobo_core::curator::{
    center_columns, dp_transform, sigma_min, DpParams, InputDataset, MeasurementOracle,
};
use pobo_core::gp::GpHyperparams;
use pobo_core::io::{matrix_from_csv, write_atomic};
use pobo_core::modeler::{run_bo, BoConfig};

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "PO_BO_SEED";

const EPSILON_HELP: &str = "Privacy budget epsilon as a raw positive number. \
A budget quoted as exp(1.1) is passed as 3.004 (e^1.1 = 3.0042).";

#[derive(Debug, Parser)]
#[command(
    name = "pobo",
    version,
    about = "Privacy-preserving outsourced Bayesian optimization",
    after_help = "Epsilon is always a raw number: exp(1.1) means --epsilon 3.004."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Release a private projection of a headerless numeric CSV.
    Transform(TransformArgs),
    /// One curator + modeler session on a dataset with known targets.
    Run(RunArgs),
    /// Multi-run comparison of the private pipeline against the baseline.
    Bench(BenchArgs),
    /// Bench over a grid of projection dimensions and epsilons.
    Sweep(SweepArgs),
    /// Measure distance and kernel preservation between X and a release Z.
    Check(CheckArgs),
    /// Print the guarantee constants for a configuration.
    Constants(ConstantsArgs),
}

#[derive(Debug, Args)]
struct PrivacyArgs {
    #[arg(long, help = EPSILON_HELP, allow_negative_numbers = true)]
    epsilon: f64,
    /// Privacy failure probability delta, in (0, 1).
    #[arg(long)]
    delta: f64,
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// Headerless CSV, one input per line.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    privacy: PrivacyArgs,
    /// Projection dimension.
    #[arg(long)]
    r: usize,
    /// Projection seed; falls back to PO_BO_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Released matrix, headerless CSV.
    #[arg(long)]
    out: PathBuf,
    /// Provenance JSON. Defaults to the output path with a .json extension.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HyperArgs {
    /// Kernel signal variance. Give all three kernel flags, or none to fit.
    #[arg(long)]
    signal_variance: Option<f64>,
    #[arg(long)]
    length_scale: Option<f64>,
    #[arg(long)]
    noise_variance: Option<f64>,
}

impl HyperArgs {
    fn fixed(&self) -> Result<Option<GpHyperparams>, CliError> {
        match (self.signal_variance, self.length_scale, self.noise_variance) {
            (Some(s), Some(l), Some(n)) => Ok(Some(GpHyperparams::new(s, l, n).map_err(usage)?)),
            (None, None, None) => Ok(None),
            _ => Err(CliError::Usage(
                "--signal-variance, --length-scale and --noise-variance go together".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Headerless CSV of inputs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Headerless single-column CSV of objective values, one per input.
    #[arg(long)]
    targets: PathBuf,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 0.05)]
    delta_ucb: f64,
    /// Master seed for the projection and the measurement noise; falls back
    /// to PO_BO_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Rescale inputs so the largest row norm equals this value first.
    #[arg(long)]
    max_norm: Option<f64>,
    /// Let the modeler query the same row more than once.
    #[arg(long)]
    allow_repeats: bool,
    /// Observation log CSV. Metadata goes next to it as .json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    SyntheticQuick,
    SyntheticFull,
    Branin,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent.
    #[arg(long, value_enum, default_value_t = Profile::SyntheticQuick)]
    profile: Profile,
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed; falls back to PO_BO_SEED, then the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, help = EPSILON_HELP, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    delta_ucb: Option<f64>,
    #[arg(long)]
    max_norm: Option<f64>,
    #[arg(long)]
    eps_ucb: Option<f64>,
    /// Let the modeler query the same row more than once.
    #[arg(long)]
    allow_repeats: bool,
    /// Worker threads for independent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output CSV. Metadata goes next to it as .json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated projection dimensions.
    #[arg(long, value_delimiter = ',')]
    r_values: Option<Vec<usize>>,
    /// Comma-separated raw epsilons.
    #[arg(long, value_delimiter = ',')]
    epsilon_values: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Original inputs, headerless CSV. Centered before comparison.
    #[arg(long)]
    x: PathBuf,
    /// Released matrix, headerless CSV with the same row order.
    #[arg(long)]
    z: PathBuf,
    /// Distortion level nu.
    #[arg(long)]
    nu: f64,
    /// Upper-bound inflation C'.
    #[arg(long, default_value_t = 1.0)]
    c_prime: f64,
    /// Also check kernel preservation with this lengthscale.
    #[arg(long)]
    length_scale: Option<f64>,
    /// Kernel distortion bound; defaults to nu * (diam / length_scale)^2.
    #[arg(long)]
    c: Option<f64>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    /// Dataset to take n, sigma_min and the diameter from.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma_min: Option<f64>,
    /// diam(X) / lengthscale; computed from --in when absent.
    #[arg(long)]
    diameter_ratio: Option<f64>,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 0.1)]
    eps_ucb: f64,
    #[arg(long, default_value_t = 0.05)]
    delta_ucb: f64,
    /// Bound L on the magnitude of every measurement.
    #[arg(long)]
    output_bound: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_variance: f64,
    #[arg(long)]
    length_scale: f64,
    #[arg(long)]
    noise_variance: f64,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    /// Input dimension for the information-gain surrogate; taken from --in
    /// when absent.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Core(#[from] pobo_core::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let invocation: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, &invocation) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pobo: error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}

fn execute(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Transform(a) => transform(a, argv),
        Command::Run(a) => run(a, argv),
        Command::Bench(a) => bench(a, argv),
        Command::Sweep(a) => sweep(a, argv),
        Command::Check(a) => check(a),
        Command::Constants(a) => constants(a),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum SeedSource {
    Flag,
    Environment,
    Config,
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })
        }
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<(u64, SeedSource), CliError> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    match env_seed()? {
        Some(s) => Ok((s, SeedSource::Environment)),
        None => Err(CliError::Usage(format!(
            "--seed is required (or set {SEED_ENV})"
        ))),
    }
}

fn invocation_json(argv: &[String], seed: u64, source: SeedSource) -> Value {
    json!({ "argv": argv, "seed": seed, "seed_source": source })
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let file = File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    matrix_from_csv(file).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_dataset(path: &Path) -> Result<InputDataset, CliError> {
    InputDataset::new(read_matrix(path)?).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    write_atomic(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json(v: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

fn metadata_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Writes the primary output and its JSON metadata. Everything is computed
/// before either file is touched.
fn write_pair(out: &Path, primary: &[u8], meta: &Value) -> Result<(), CliError> {
    let meta_path = metadata_path(out);
    if meta_path == out {
        return Err(CliError::Usage(format!(
            "--out {} would collide with its metadata file",
            out.display()
        )));
    }
    write_file(out, primary)?;
    write_file(&meta_path, &to_json(meta))
}

fn print_or_write(out: Option<&Path>, v: &impl Serialize) -> Result<(), CliError> {
    let bytes = to_json(v);
    match out {
        Some(p) => write_file(p, &bytes),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|source| CliError::Write {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn dp_from(p: &PrivacyArgs) -> Result<DpParams, CliError> {
    DpParams::new(p.epsilon, p.delta).map_err(usage)
}

fn transform(a: TransformArgs, argv: &[String]) -> Result<(), CliError> {
    let dp = dp_from(&a.privacy)?;
    if a.r == 0 {
        return Err(CliError::Usage("--r must be >= 1".into()));
    }
    let (seed, source) = resolve_seed(a.seed)?;
    let x = read_dataset(&a.input)?;
    let released = dp_transform(&x, dp, a.r, seed)?;
    let mut meta = serde_json::to_value(released.sidecar()).expect("sidecar serializes");
    meta["input"] = json!(a.input);
    meta["invocation"] = invocation_json(argv, seed, source);
    let sidecar = a.sidecar.unwrap_or_else(|| metadata_path(&a.out));
    if sidecar == a.out {
        return Err(CliError::Usage("--sidecar must differ from --out".into()));
    }
    write_file(&a.out, released.to_csv().as_bytes())?;
    write_file(&sidecar, &to_json(&meta))
}

fn run(a: RunArgs, argv: &[String]) -> Result<(), CliError> {
    let dp = dp_from(&a.privacy)?;
    if a.r == 0 {
        return Err(CliError::Usage("--r must be >= 1".into()));
    }
    let bo = BoConfig::new(a.horizon, a.delta_ucb / 2.0, !a.allow_repeats).map_err(usage)?;
    let fixed = a.hyper.fixed()?;
    let (seed, source) = resolve_seed(a.seed)?;

    let mut x = read_dataset(&a.input)?;
    let targets = read_matrix(&a.targets)?;
    if targets.ncols() != 1 || targets.nrows() != x.n() {
        return Err(CliError::Parse {
            path: a.targets.clone(),
            message: format!(
                "expected one column with {} rows, got {}x{}",
                x.n(),
                targets.nrows(),
                targets.ncols()
            ),
        });
    }
    let truth: Vec<f64> = targets.iter().copied().collect();
    if let Some(m) = a.max_norm {
        x = preprocess_inputs(&x, None, m, None, false)?.0;
    }
    let hyper = match fixed {
        Some(h) => h,
        None => fit_isotropic(
            x.rows(),
            &truth,
            &FitGrid {
                seed,
                ..FitGrid::default()
            },
        )?,
    };

    let (projection_seed, oracle_seed) = run_seeds(seed, 0);
    let released = dp_transform(&x, dp, a.r, projection_seed)?;
    let mut oracle = MeasurementOracle::new(truth.clone(), hyper.noise_variance(), oracle_seed)?;
    let log = run_bo(&released.candidates(), &mut oracle, &bo, hyper)?;
    let trace = regret_metrics(&log, &truth)?;
    let meta = json!({
        "invocation": invocation_json(argv, seed, source),
        "seeds": { "master": seed, "projection": projection_seed, "oracle": oracle_seed },
        "transform": released.sidecar(),
        "hyper": hyper,
        "fitted_hyper": fixed.is_none(),
        "exclude_observed": bo.exclude_observed,
        "delta_prime": bo.delta_prime,
        "regret": trace,
    });
    write_pair(&a.out, log.to_csv().as_bytes(), &meta)
}

struct Resolved {
    config: ExperimentConfig,
    seed_source: SeedSource,
    jobs: Option<usize>,
    out: PathBuf,
    profile: Option<Profile>,
}

fn resolve_experiment(a: ExperimentArgs) -> Result<Resolved, CliError> {
    let (mut cfg, profile) = match &a.config {
        Some(path) => {
            let file = File::open(path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            let cfg: ExperimentConfig =
                serde_json::from_reader(file).map_err(|e| CliError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            (cfg, None)
        }
        None => {
            let cfg = match a.profile {
                Profile::SyntheticQuick => profiles::synthetic_quick(),
                Profile::SyntheticFull => profiles::synthetic_full(),
                Profile::Branin => profiles::branin_default(),
            };
            (cfg, Some(a.profile))
        }
    };
    let seed_source = if let Some(s) = a.seed {
        cfg.master_seed = s;
        SeedSource::Flag
    } else if let Some(s) = env_seed()? {
        cfg.master_seed = s;
        SeedSource::Environment
    } else {
        SeedSource::Config
    };
    if a.epsilon.is_some() || a.delta.is_some() {
        cfg.dp = DpParams::new(
            a.epsilon.unwrap_or(cfg.dp.epsilon()),
            a.delta.unwrap_or(cfg.dp.delta()),
        )
        .map_err(usage)?;
    }
    if let Some(v) = a.runs {
        cfg.runs = v;
    }
    if let Some(v) = a.r {
        cfg.r = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = a.delta_ucb {
        cfg.delta_ucb = v;
    }
    if let Some(v) = a.max_norm {
        cfg.max_norm = v;
    }
    if let Some(v) = a.eps_ucb {
        cfg.eps_ucb = v;
    }
    if a.allow_repeats {
        cfg.exclude_observed = false;
    }
    cfg.validate().map_err(usage)?;
    if a.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    Ok(Resolved {
        config: cfg,
        seed_source,
        jobs: a.jobs,
        out: a.out,
        profile,
    })
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn bench(a: BenchArgs, argv: &[String]) -> Result<(), CliError> {
    let res = resolve_experiment(a.experiment)?;
    let cfg = &res.config;
    let report = with_jobs(res.jobs, || {
        Objective::build(cfg).and_then(|obj| run_experiment_on(&obj, cfg))
    })??;
    let meta = json!({
        "invocation": invocation_json(argv, cfg.master_seed, res.seed_source),
        "report": report,
    });
    write_pair(&res.out, report_csv(&report).as_bytes(), &meta)
}

fn sweep(a: SweepArgs, argv: &[String]) -> Result<(), CliError> {
    let res = resolve_experiment(a.experiment)?;
    let cfg = &res.config;
    let rs = a.r_values.unwrap_or_else(|| profiles::R_LEVELS.to_vec());
    let epsilons = match a.epsilon_values {
        Some(v) => v,
        None => match res.profile {
            Some(Profile::Branin) => profiles::EPSILON_LEVELS_BRANIN
                .iter()
                .map(|e| e.exp())
                .collect(),
            Some(_) => profiles::EPSILON_LEVELS_QUICK
                .iter()
                .map(|e| e.exp())
                .collect(),
            None => vec![cfg.dp.epsilon()],
        },
    };
    if rs.is_empty() || epsilons.is_empty() || rs.contains(&0) {
        return Err(CliError::Usage(
            "sweep needs non-empty lists and r >= 1".into(),
        ));
    }
    for &e in &epsilons {
        DpParams::new(e, cfg.dp.delta()).map_err(usage)?;
    }
    let (objective, rows) = with_jobs(res.jobs, || run_sweep(cfg, &rs, &epsilons))??;
    let meta = json!({
        "invocation": invocation_json(argv, cfg.master_seed, res.seed_source),
        "config": cfg,
        "hyper": objective.hyper,
        "sigma_y": objective.sigma_y(),
        "notes": objective.notes,
        "rows": rows,
    });
    write_pair(&res.out, sweep_csv(&rows).as_bytes(), &meta)
}

fn check(a: CheckArgs) -> Result<(), CliError> {
    let x = read_dataset(&a.x)?;
    let z = read_matrix(&a.z)?;
    if z.nrows() != x.n() {
        return Err(CliError::Parse {
            path: a.z.clone(),
            message: format!("has {} rows, X has {}", z.nrows(), x.n()),
        });
    }
    let xc = center_columns(&x);
    let distances = check_distance_preservation(&xc, &z, a.nu, a.c_prime)?;
    let kernel = match a.length_scale {
        Some(l) => {
            let hyper = GpHyperparams::new(1.0, l, 1.0).map_err(usage)?;
            let phi = diameter(&xc, DiameterMode::Exact) / l;
            let c = a.c.unwrap_or(a.nu * phi * phi);
            let result = check_covariance_preservation(&xc, &z, &hyper, c, a.nu)?;
            Some(json!({ "length_scale": l, "diameter_ratio": phi, "C": c, "result": result }))
        }
        None => None,
    };
    let out = json!({ "nu": a.nu, "C_prime": a.c_prime, "distances": distances, "kernel": kernel });
    print_or_write(a.out.as_deref(), &out)
}

fn constants(a: ConstantsArgs) -> Result<(), CliError> {
    let dp = dp_from(&a.privacy)?;
    let hyper =
        GpHyperparams::new(a.signal_variance, a.length_scale, a.noise_variance).map_err(usage)?;
    let data = a.input.as_deref().map(read_dataset).transpose()?;
    let missing = |flag: &str| CliError::Usage(format!("{flag} is required without --in"));
    let (n, smin, phi, dim) = match &data {
        Some(x) => {
            let xc = center_columns(x);
            (
                a.n.unwrap_or(x.n()),
                a.sigma_min.map_or_else(|| sigma_min(&xc), Ok)?,
                a.diameter_ratio
                    .unwrap_or_else(|| diameter(&xc, DiameterMode::Exact) / a.length_scale),
                a.dim.unwrap_or(x.d()),
            )
        }
        None => (
            a.n.ok_or_else(|| missing("--n"))?,
            a.sigma_min.ok_or_else(|| missing("--sigma-min"))?,
            a.diameter_ratio
                .ok_or_else(|| missing("--diameter-ratio"))?,
            a.dim.ok_or_else(|| missing("--dim"))?,
        ),
    };
    let params =
        GuaranteeParams::new(a.eps_ucb, a.delta_ucb, a.output_bound, phi).map_err(usage)?;
    let consts = derive_guarantee(&params, n, a.r, &dp, smin, &hyper)
        .map_err(usage)?
        .with_regret(a.horizon, n, dim, a.delta_ucb, &hyper)?;
    print_or_write(a.out.as_deref(), &consts)
}
