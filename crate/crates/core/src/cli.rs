//! Command-line front end: `fit`, `predict` and `sweep`.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Indices in every file read or written are one-based unless
//! `--zero-based` is given.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::model::{CheckpointMeta, FactorModel};
use crate::optim::{fit, Strategy, TrainConfig};
use crate::synth::{self, DensityProfile, Signal, SynthSpec};
use crate::tensor::{IndexBase, SparseTensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const REPORT_FILE: &str = "report.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const MODEL_DIR: &str = "model";

#[derive(Debug, Parser)]
#[command(
    name = "tatd",
    version,
    about = "Time-aware CP decomposition of sparse temporal tensors"
)]
struct Cli {
    /// Worker threads for parallel sections (0 lets the runtime decide).
    #[arg(long, global = true, env = "TATD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a tensor file and evaluate it on a held-out split.
    Fit(FitArgs),
    /// Predict entries from a saved model.
    Predict(PredictArgs),
    /// Run a synthetic benchmark experiment.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Delimited tensor file: one entry per line, indices then value.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of modes. May also come from the config file.
    #[arg(long)]
    modes: Option<usize>,
    /// Time mode, one-based.
    #[arg(long)]
    time_mode: Option<usize>,
    /// Indices in the data file start at 0.
    #[arg(long)]
    zero_based: bool,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// File of `key=value` lines; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    /// Smoothing window, odd and at least 3.
    #[arg(long, value_parser = parse_window)]
    window: Option<usize>,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = strategy_parser())]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Use the same smoothing penalty on every time slice.
    #[arg(long)]
    no_sparsity_penalty: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint directory written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// File with one index tuple per line.
    #[arg(long)]
    indices: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    zero_based: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Sparsity,
    Penalty,
    Rank,
    Optimizers,
    Density,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Uniform,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SignalArg {
    Sinusoid,
    RandomWalk,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    #[arg(long)]
    out: PathBuf,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Tensor file for the density experiment; a synthetic tensor otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    time_mode: Option<usize>,
    #[arg(long)]
    zero_based: bool,
    /// Generator dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    true_rank: Option<usize>,
    /// Observation rate for experiments other than the sparsity sweep.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum, default_value = "sinusoid")]
    signal: SignalArg,
    #[arg(long, default_value_t = 12.0)]
    period: f64,
    /// Random-walk step size.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    profile: ProfileArg,
    /// Wall-clock budget per run in the optimizer comparison, in seconds.
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
    #[command(flatten)]
    train: TrainArgs,
}

fn parse_window(s: &str) -> Result<usize, String> {
    let w: usize = s.parse().map_err(|e| format!("{e}"))?;
    if w < 3 || w % 2 == 0 {
        return Err(format!("window must be odd and at least 3, got {w}"));
    }
    Ok(w)
}

fn strategy_parser() -> impl TypedValueParser<Value = Strategy> {
    PossibleValuesParser::new(Strategy::ALL.map(Strategy::name))
        .map(|s| s.parse::<Strategy>().expect("listed strategy"))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidWindow(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: thread pool already configured: {e}");
        }
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a, cli.threads),
        Command::Predict(a) => cmd_predict(a),
        Command::Sweep(a) => cmd_sweep(a, cli.threads),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn read_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected key=value", path.display(), n + 1))
        })?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

/// Values from the config file not yet consumed; anything left over is an
/// unknown key.
struct FileValues {
    map: BTreeMap<String, String>,
}

impl FileValues {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
        }
    }

    fn finish(self) -> CliResult<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(CliError::Usage(format!("unknown config key {k:?}"))),
        }
    }
}

fn resolve_config(
    args: &TrainArgs,
    base: TrainConfig,
    file: &mut FileValues,
) -> CliResult<TrainConfig> {
    let mut c = base;
    macro_rules! set {
        ($field:ident, $flag:expr, $key:literal) => {
            if let Some(v) = $flag {
                file.map.remove($key);
                c.$field = v;
            } else if let Some(v) = file.take($key)? {
                c.$field = v;
            }
        };
    }
    set!(rank, args.rank, "rank");
    set!(window, args.window, "window");
    set!(bandwidth, args.sigma, "sigma");
    set!(lambda_t, args.lambda_t, "lambda_t");
    set!(lambda_r, args.lambda_r, "lambda_r");
    set!(learning_rate, args.lr, "lr");
    set!(seed, args.seed, "seed");
    set!(strategy, args.strategy, "strategy");
    set!(max_outer, args.max_outer, "max_outer");
    set!(max_inner, args.max_inner, "max_inner");
    set!(patience, args.patience, "patience");
    if args.no_sparsity_penalty {
        file.map.remove("sparsity_penalty");
        c.sparsity_penalty = false;
    } else if let Some(v) = file.take("sparsity_penalty")? {
        c.sparsity_penalty = v;
    }
    c.validate()?;
    Ok(c)
}

fn config_json(c: &TrainConfig) -> Value {
    json!({
        "rank": c.rank,
        "window": c.window,
        "sigma": c.bandwidth,
        "lambda_t": c.lambda_t,
        "lambda_r": c.lambda_r,
        "lr": c.learning_rate,
        "max_outer": c.max_outer,
        "max_inner": c.max_inner,
        "patience": c.patience,
        "strategy": c.strategy.name(),
        "sparsity_penalty": c.sparsity_penalty,
        "seed": c.seed,
    })
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn fingerprint(path: &Path, x: &SparseTensor) -> CliResult<Value> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let digest = Sha256::digest(&bytes);
    Ok(json!({
        "path": path.display().to_string(),
        "entries": x.nnz(),
        "dims": x.dims(),
        "sha256": format!("{digest:x}"),
    }))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_manifest(path: &Path, mut manifest: Value, mut artifacts: Vec<PathBuf>) -> CliResult<()> {
    artifacts.push(path.to_path_buf());
    manifest["artifacts"] = json!(artifacts
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>());
    manifest["finished_unix"] = json!(unix_now());
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn base_of(zero_based: bool) -> IndexBase {
    if zero_based {
        IndexBase::Zero
    } else {
        IndexBase::One
    }
}

fn time_mode_of(one_based: usize, modes: usize) -> CliResult<usize> {
    if one_based == 0 || one_based > modes {
        return Err(CliError::Usage(format!(
            "--time-mode must be between 1 and {modes}, got {one_based}"
        )));
    }
    Ok(one_based - 1)
}

fn cmd_fit(args: FitArgs, threads: Option<usize>) -> CliResult<i32> {
    let started = unix_now();
    let mut file = FileValues {
        map: match &args.train.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        },
    };
    let modes = match args.modes {
        Some(m) => Some(m),
        None => file.take::<usize>("modes")?,
    }
    .ok_or_else(|| CliError::Usage("--modes is required".into()))?;
    if modes < 2 {
        return Err(CliError::Usage(format!(
            "--modes must be at least 2, got {modes}"
        )));
    }
    let time_mode_arg = match args.time_mode {
        Some(t) => t,
        None => file.take::<usize>("time_mode")?.unwrap_or(1),
    };
    let time_mode = time_mode_of(time_mode_arg, modes)?;
    let config = resolve_config(&args.train, TrainConfig::default(), &mut file)?;
    file.finish()?;

    let x = SparseTensor::ingest(&args.data, modes, time_mode, base_of(args.zero_based))?;
    let (z, normalization) = x.z_normalize()?;
    let split = z.split(config.seed)?;
    let (model, report) = fit(&split.train, &split.validation, &config)?;
    let test = model.evaluate(&split.test)?;

    create_dir(&args.out)?;
    let model_dir = args.out.join(MODEL_DIR);
    model.save(
        &model_dir,
        &CheckpointMeta::for_model(&model, normalization, config.seed),
    )?;
    let report_path = args.out.join(REPORT_FILE);
    let mut w = create_file(&report_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;

    let mut artifacts: Vec<PathBuf> = (1..=model.order())
        .map(|n| model_dir.join(format!("factor_{n}.csv")))
        .collect();
    artifacts.push(model_dir.join(crate::model::MANIFEST_FILE));
    artifacts.push(report_path);
    let manifest = json!({
        "command": "fit",
        "config": config_json(&config),
        "modes": modes,
        "time_mode": time_mode_arg,
        "index_base": if args.zero_based { 0 } else { 1 },
        "threads": threads,
        "data": fingerprint(&args.data, &x)?,
        "split": {
            "train": split.train.nnz(),
            "validation": split.validation.nnz(),
            "test": split.test.nnz(),
        },
        "normalization": { "mean": normalization.mean, "std": normalization.std },
        "result": {
            "iterations": report.records.len(),
            "best_iteration": report.best_iteration,
            "stopping_reason": report.stopping_reason.to_string(),
            "test_rmse": test.rmse,
            "test_mae": test.mae,
            "test_rmse_original": test.rmse * normalization.std,
            "test_mae_original": test.mae * normalization.std,
        },
        "started_unix": started,
    });
    write_manifest(&args.out.join(RUN_MANIFEST_FILE), manifest, artifacts)?;

    println!(
        "iterations {} best {} stopped by {}",
        report.records.len(),
        report
            .best_iteration
            .map_or("none".into(), |b| b.to_string()),
        report.stopping_reason
    );
    println!(
        "test rmse {:.6} mae {:.6} (normalized)",
        test.rmse, test.mae
    );
    println!(
        "test rmse {:.6} mae {:.6} (original scale)",
        test.rmse * normalization.std,
        test.mae * normalization.std
    );
    Ok(EXIT_OK)
}

fn parse_index_line(line: &str, order: usize, base: IndexBase) -> Result<Vec<usize>, String> {
    let tokens: Vec<&str> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.len() != order {
        return Err(format!("expected {order} indices, found {}", tokens.len()));
    }
    tokens
        .iter()
        .map(|t| {
            let i: usize = t.parse().map_err(|_| format!("invalid index {t:?}"))?;
            match base {
                IndexBase::Zero => Ok(i),
                IndexBase::One if i == 0 => Err("index 0 in a one-based file".to_string()),
                IndexBase::One => Ok(i - 1),
            }
        })
        .collect()
}

fn cmd_predict(args: PredictArgs) -> CliResult<i32> {
    let (model, meta) = FactorModel::load(&args.model)?;
    let base = base_of(args.zero_based);
    let offset = usize::from(!args.zero_based);
    let input = File::open(&args.indices).map_err(|e| Error::Io {
        path: args.indices.clone(),
        source: e,
    })?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create_file(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut failures = 0usize;
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let dims = model.dims();
        let outcome = parse_index_line(trimmed, model.order(), base).and_then(|idx| {
            if let Some(n) = (0..idx.len()).find(|&n| idx[n] >= dims[n]) {
                return Err(format!(
                    "index {} out of range for mode {} of size {}",
                    idx[n] + offset,
                    n + 1,
                    dims[n]
                ));
            }
            model
                .predict(&idx)
                .map(|p| (idx, p))
                .map_err(|e| e.to_string())
        });
        match outcome {
            Ok((idx, p)) => {
                for i in &idx {
                    write!(out, "{},", i + offset)?;
                }
                writeln!(out, "{}", meta.normalization.invert(p))?;
            }
            Err(msg) => {
                failures += 1;
                eprintln!("line {}: {msg}", n + 1);
            }
        }
    }
    out.flush()?;
    if failures > 0 {
        eprintln!("{failures} rows failed");
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn synth_spec(args: &SweepArgs, seed: u64) -> CliResult<SynthSpec> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        dims: args.dims.clone().unwrap_or(d.dims),
        true_rank: args.true_rank.unwrap_or(d.true_rank),
        signal: match args.signal {
            SignalArg::Sinusoid => Signal::Sinusoid {
                period: args.period,
            },
            SignalArg::RandomWalk => Signal::RandomWalk { step: args.step },
        },
        noise_std: args.noise.unwrap_or(d.noise_std),
        observation_rate: args.rate.unwrap_or(d.observation_rate),
        profile: match args.profile {
            ProfileArg::Uniform => DensityProfile::Uniform,
            ProfileArg::Linear => DensityProfile::Linear,
        },
        seed,
        ..d
    };
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

fn cmd_sweep(args: SweepArgs, threads: Option<usize>) -> CliResult<i32> {
    let started = unix_now();
    let mut file = FileValues {
        map: match &args.train.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        },
    };
    let config = resolve_config(&args.train, synth::benchmark_config(), &mut file)?;
    file.finish()?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if !(args.budget > 0.0 && args.budget.is_finite()) {
        return Err(CliError::Usage(format!(
            "--budget must be positive, got {}",
            args.budget
        )));
    }
    let seeds: Vec<u64> = (config.seed..config.seed + args.seeds).collect();
    let spec = synth_spec(&args, config.seed)?;

    create_dir(&args.out)?;
    let name = format!("{:?}", args.experiment).to_lowercase();
    let table_path = args.out.join(format!("{name}.csv"));
    let mut w = create_file(&table_path)?;
    let mut data = Value::Null;
    match args.experiment {
        Experiment::Sparsity => {
            synth::sparsity_sweep(&spec, &synth::SPARSITY_RATES, &seeds, &config)?
                .write_csv(&mut w)?
        }
        Experiment::Penalty => {
            synth::penalty_sweep(&spec, &synth::PENALTY_GRID, &seeds, &config)?.write_csv(&mut w)?
        }
        Experiment::Rank => {
            synth::rank_sweep(&spec, &synth::RANK_GRID, &seeds, &config)?.write_csv(&mut w)?
        }
        Experiment::Optimizers => {
            let rows = synth::optimizer_comparison(
                &spec,
                &Strategy::ALL,
                &seeds,
                &config,
                Duration::from_secs_f64(args.budget),
            )?;
            synth::write_optimizer_csv(&rows, &mut w)?
        }
        Experiment::Density => {
            let x = match &args.data {
                Some(path) => {
                    let modes = args
                        .modes
                        .ok_or_else(|| CliError::Usage("--modes is required with --data".into()))?;
                    let t = time_mode_of(args.time_mode.unwrap_or(1), modes)?;
                    let x = SparseTensor::ingest(path, modes, t, base_of(args.zero_based))?;
                    data = fingerprint(path, &x)?;
                    x
                }
                None => synth::generate(&spec)?.0,
            };
            x.slice_census().write_csv(&mut w)?
        }
    }
    w.flush()?;
    drop(w);

    let manifest = json!({
        "command": "sweep",
        "experiment": name,
        "config": config_json(&config),
        "seeds": seeds,
        "generator": serde_json::to_value(&spec)?,
        "budget_seconds": args.budget,
        "threads": threads,
        "data": data,
        "started_unix": started,
    });
    write_manifest(
        &args.out.join(RUN_MANIFEST_FILE),
        manifest,
        vec![table_path.clone()],
    )?;
    println!("wrote {}", table_path.display());
    Ok(EXIT_OK)
}
