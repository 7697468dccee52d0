//! Synthetic temporal tensors with smooth time factors, and the experiment
//! drivers built on them.

use std::f64::consts::TAU;
use std::io::Write;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::FactorModel;
use crate::optim::{fit, Strategy, TrainConfig};
use crate::tensor::{Normalization, SparseTensor, SplitDataset};

/// Shape of the ground-truth time factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Signal {
    /// `sin(2π (t / period + k / K*))` in component `k`.
    Sinusoid { period: f64 },
    /// Gaussian random walk with the given step standard deviation, started
    /// from a standard normal draw.
    RandomWalk { step: f64 },
}

/// How observed indices spread over time slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityProfile {
    Uniform,
    /// Slice sampling weight grows linearly from `0.1` at the first time
    /// index to `1.9` at the last.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: Vec<usize>,
    pub time_mode: usize,
    pub true_rank: usize,
    pub signal: Signal,
    pub noise_std: f64,
    pub observation_rate: f64,
    pub profile: DensityProfile,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dims: vec![50, 20, 15],
            time_mode: 0,
            true_rank: 3,
            signal: Signal::Sinusoid { period: 12.0 },
            noise_std: 0.1,
            observation_rate: 0.3,
            profile: DensityProfile::Uniform,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config(format!("invalid dims {:?}", self.dims)));
        }
        if self.time_mode >= self.dims.len() {
            return Err(Error::Config("time mode out of range".into()));
        }
        if self.true_rank == 0 {
            return Err(Error::Config("true rank must be at least 1".into()));
        }
        if !(self.observation_rate > 0.0 && self.observation_rate <= 1.0) {
            return Err(Error::Config(format!(
                "observation rate must be in (0, 1], got {}",
                self.observation_rate
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise std must be non-negative".into()));
        }
        match self.signal {
            Signal::Sinusoid { period } if !(period >= 2.0) => Err(Error::Config(format!(
                "period must be at least 2, got {period}"
            ))),
            Signal::RandomWalk { step } if !(step >= 0.0) => Err(Error::Config(
                "random-walk step must be non-negative".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        SynthSpec {
            observation_rate: rate,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SynthSpec {
            seed,
            ..self.clone()
        }
    }
}

/// Samples a tensor and returns it with the noiseless generating model.
pub fn generate(spec: &SynthSpec) -> Result<(SparseTensor, FactorModel)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k_true = spec.true_rank;
    let factors = spec
        .dims
        .iter()
        .enumerate()
        .map(|(n, &rows)| {
            if n == spec.time_mode {
                time_signal(spec.signal, rows, k_true, &mut rng)
            } else {
                Matrix::from_fn(rows, k_true, |_, _| rng.gen::<f64>())
            }
        })
        .collect();
    let truth = FactorModel::from_factors(factors, spec.time_mode)?;

    let cells = spec.cells();
    let count = ((spec.observation_rate * cells as f64).round() as usize).clamp(1, cells);
    let chosen = sample_cells(spec, cells, count, &mut rng);

    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let order = spec.dims.len();
    let mut indices = Vec::with_capacity(count * order);
    let mut values = Vec::with_capacity(count);
    let mut idx = vec![0usize; order];
    for cell in chosen {
        unravel(cell, &spec.dims, &mut idx);
        let clean = truth.predict_unchecked(&idx);
        let eps = if spec.noise_std > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        indices.extend_from_slice(&idx);
        values.push(clean + eps);
    }
    let tensor = SparseTensor::new(spec.dims.clone(), spec.time_mode, indices, values)?;
    Ok((tensor, truth))
}

fn time_signal(signal: Signal, rows: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
    match signal {
        Signal::Sinusoid { period } => Matrix::from_fn(rows, rank, |t, k| {
            (TAU * (t as f64 / period + k as f64 / rank as f64)).sin()
        }),
        Signal::RandomWalk { step } => {
            let std = Normal::new(0.0, 1.0).expect("unit normal");
            let mut m = Matrix::zeros(rows, rank);
            for k in 0..rank {
                m[(0, k)] = std.sample(rng);
            }
            for t in 1..rows {
                for k in 0..rank {
                    m[(t, k)] = m[(t - 1, k)] + step * std.sample(rng);
                }
            }
            m
        }
    }
}

/// Cells sampled without replacement, returned in increasing order.
fn sample_cells(spec: &SynthSpec, cells: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen: Vec<usize> = match spec.profile {
        DensityProfile::Uniform => {
            let mut all: Vec<usize> = (0..cells).collect();
            all.shuffle(rng);
            all.truncate(count);
            all
        }
        DensityProfile::Linear => {
            // Weighted sampling without replacement: keep the `count` largest
            // keys u^(1/w).
            let time_len = spec.dims[spec.time_mode];
            let mut idx = vec![0usize; spec.dims.len()];
            let mut keyed: Vec<(f64, usize)> = (0..cells)
                .map(|cell| {
                    unravel(cell, &spec.dims, &mut idx);
                    let w = linear_weight(idx[spec.time_mode], time_len);
                    let u: f64 = rng.gen();
                    (u.powf(1.0 / w), cell)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(count).map(|(_, c)| c).collect()
        }
    };
    chosen.sort_unstable();
    chosen
}

fn linear_weight(t: usize, time_len: usize) -> f64 {
    if time_len < 2 {
        return 1.0;
    }
    0.1 + 1.8 * t as f64 / (time_len - 1) as f64
}

fn unravel(mut cell: usize, dims: &[usize], out: &mut [usize]) {
    for (o, &d) in out.iter_mut().zip(dims).rev() {
        *o = cell % d;
        cell /= d;
    }
}

/// A generated tensor, z-normalized and split 8:1:1.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub data: SplitDataset,
    pub normalization: Normalization,
    pub truth: FactorModel,
}

impl Benchmark {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        let (tensor, truth) = generate(spec)?;
        let (normalized, normalization) = tensor.z_normalize()?;
        let data = normalized.split(spec.seed)?;
        Ok(Benchmark {
            data,
            normalization,
            truth,
        })
    }

    /// Fits on the training split and scores on the test split.
    pub fn run(&self, config: &TrainConfig) -> Result<CellResult> {
        let (model, report) = fit(&self.data.train, &self.data.validation, config)?;
        let test = model.evaluate(&self.data.test)?;
        let val = model.evaluate(&self.data.validation)?;
        Ok(CellResult {
            test_rmse: test.rmse,
            test_mae: test.mae,
            val_rmse: val.rmse,
            seconds: report.last().map_or(0.0, |r| r.seconds),
            iterations: report.records.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub test_rmse: f64,
    pub test_mae: f64,
    pub val_rmse: f64,
    pub seconds: f64,
    pub iterations: usize,
}

/// The three model variants compared by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Smoothing with sparsity-scaled penalties.
    Tatd,
    /// Smoothing with the same penalty on every slice.
    TatdNoPenalty,
    /// No smoothing (`λ_t = 0`).
    CpAls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Tatd, Method::TatdNoPenalty, Method::CpAls];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tatd => "tatd",
            Method::TatdNoPenalty => "tatd_no_penalty",
            Method::CpAls => "cp_als",
        }
    }

    /// `base` adjusted to this variant.
    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.strategy = Strategy::AlsAdam;
        match self {
            Method::Tatd => c.sparsity_penalty = true,
            Method::TatdNoPenalty => c.sparsity_penalty = false,
            Method::CpAls => c.lambda_t = 0.0,
        }
        c
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Swept value, formatted for the table's first column.
    pub setting: String,
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},method,seed,rmse,mae", self.parameter)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.setting, r.method, r.seed, r.rmse, r.mae
            )?;
        }
        Ok(())
    }

    /// Mean RMSE of the rows matching `setting` and `method`.
    pub fn mean_rmse(&self, setting: &str, method: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.setting == setting && r.method == method)
            .map(|r| r.rmse)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Training settings used by the benchmark experiments: rank matched to the
/// default generator, a larger step and a longer patience than the
/// general-purpose defaults so that fits on very sparse draws get past the
/// first few iterations.
pub fn benchmark_config() -> TrainConfig {
    TrainConfig {
        rank: 3,
        learning_rate: 0.05,
        patience: 20,
        ..TrainConfig::default()
    }
}

pub const SPARSITY_RATES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const PENALTY_GRID: [f64; 6] = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
pub const RANK_GRID: [usize; 6] = [5, 10, 20, 30, 40, 50];

fn seeded(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.clone()
    }
}

/// Test error of every method at every observation rate.
pub fn sparsity_sweep(
    spec: &SynthSpec,
    rates: &[f64],
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for &rate in rates {
        for &seed in seeds {
            let bench = Benchmark::new(&spec.with_rate(rate).with_seed(seed))?;
            for method in Method::ALL {
                let r = bench.run(&method.config(&seeded(config, seed)))?;
                rows.push(SweepRow {
                    setting: format!("{rate}"),
                    method: method.name().into(),
                    seed,
                    rmse: r.test_rmse,
                    mae: r.test_mae,
                });
            }
        }
    }
    Ok(SweepTable {
        parameter: "rate",
        rows,
    })
}

/// Test error of the full model over a grid of smoothing strengths.
pub fn penalty_sweep(
    spec: &SynthSpec,
    lambdas: &[f64],
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let bench = Benchmark::new(&spec.with_seed(seed))?;
        for &lambda_t in lambdas {
            let mut c = Method::Tatd.config(&seeded(config, seed));
            c.lambda_t = lambda_t;
            let r = bench.run(&c)?;
            rows.push(SweepRow {
                setting: format!("{lambda_t}"),
                method: Method::Tatd.name().into(),
                seed,
                rmse: r.test_rmse,
                mae: r.test_mae,
            });
        }
    }
    Ok(SweepTable {
        parameter: "lambda_t",
        rows,
    })
}

/// Test error of the full model and the unsmoothed baseline over ranks.
pub fn rank_sweep(
    spec: &SynthSpec,
    ranks: &[usize],
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let bench = Benchmark::new(&spec.with_seed(seed))?;
        for &rank in ranks {
            for method in [Method::Tatd, Method::CpAls] {
                let mut c = method.config(&seeded(config, seed));
                c.rank = rank;
                let r = bench.run(&c)?;
                rows.push(SweepRow {
                    setting: format!("{rank}"),
                    method: method.name().into(),
                    seed,
                    rmse: r.test_rmse,
                    mae: r.test_mae,
                });
            }
        }
    }
    Ok(SweepTable {
        parameter: "rank",
        rows,
    })
}

/// Outcome of one optimizer under a wall-clock budget.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub val_rmse: f64,
    pub test_rmse: f64,
    pub seconds: f64,
    pub iterations: usize,
}

/// Every strategy trained on the same split with the same time budget.
pub fn optimizer_comparison(
    spec: &SynthSpec,
    strategies: &[Strategy],
    seeds: &[u64],
    config: &TrainConfig,
    budget: Duration,
) -> Result<Vec<OptimizerRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let bench = Benchmark::new(&spec.with_seed(seed))?;
        for &strategy in strategies {
            let c = TrainConfig {
                strategy,
                time_budget: Some(budget),
                ..seeded(config, seed)
            };
            let r = bench.run(&c)?;
            rows.push(OptimizerRow {
                strategy,
                seed,
                val_rmse: r.val_rmse,
                test_rmse: r.test_rmse,
                seconds: r.seconds,
                iterations: r.iterations,
            });
        }
    }
    Ok(rows)
}

pub fn write_optimizer_csv<W: Write>(rows: &[OptimizerRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "strategy,seed,val_rmse,test_rmse,seconds,iterations")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{}",
            r.strategy, r.seed, r.val_rmse, r.test_rmse, r.seconds, r.iterations
        )?;
    }
    Ok(())
}
