//! Training: alternating closed-form updates for non-time factors and
//! adaptive gradient descent for the time factor, with validation-driven
//! stopping.
//!
//! One outer iteration visits the modes in order. A mode updated by gradient
//! steps runs an inner loop of full-gradient epochs that ends at the first
//! epoch whose validation RMSE rises above the previous epoch's (or after
//! `max_inner` epochs). The outer loop ends after `patience` consecutive
//! iterations whose validation RMSE rose above the previous iteration's, or
//! after `max_outer` iterations, or when the optional wall-clock budget runs
//! out. The model with the lowest validation RMSE among completed iterations
//! is returned.
//!
//! Gradient-based updates follow the objective divided by the number of
//! training entries. The minimizer is unchanged and Adam is insensitive to
//! the scale, but it keeps plain gradient steps stable at ordinary learning
//! rates.

mod adam;
mod gradient;
mod index;
mod rowwise;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

pub use adam::{adam_step, sgd_step, AdamState};
pub use gradient::time_gradient;
pub use rowwise::rowwise_update;

use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::smoothing::SmoothingSpec;
use crate::tensor::SparseTensor;
use index::TensorIndex;

/// How the factor matrices are updated within an outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Strategy {
    /// Row-wise least squares for non-time modes, Adam for the time mode.
    #[default]
    AlsAdam,
    /// Adam on all factor matrices jointly.
    Adam,
    /// Full-batch gradient descent on all factor matrices jointly.
    Sgd,
    /// Row-wise least squares for non-time modes, gradient descent for the
    /// time mode.
    AlsSgd,
    /// Adam on one factor matrix at a time.
    AltAdam,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::AlsAdam,
        Strategy::Adam,
        Strategy::Sgd,
        Strategy::AlsSgd,
        Strategy::AltAdam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AlsAdam => "als_adam",
            Strategy::Adam => "adam",
            Strategy::Sgd => "sgd",
            Strategy::AlsSgd => "als_sgd",
            Strategy::AltAdam => "alt_adam",
        }
    }

    fn uses_adam(self) -> bool {
        matches!(self, Strategy::AlsAdam | Strategy::Adam | Strategy::AltAdam)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!(
                    "unknown strategy {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rank: usize,
    pub window: usize,
    pub bandwidth: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub learning_rate: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub patience: usize,
    pub strategy: Strategy,
    /// Scale smoothing per slice by its time sparsity; otherwise every slice
    /// uses `β = 1`.
    pub sparsity_penalty: bool,
    pub seed: u64,
    pub time_budget: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: 10,
            window: 3,
            bandwidth: 0.5,
            lambda_t: 100.0,
            lambda_r: 1e-2,
            learning_rate: 1e-2,
            max_outer: 100,
            max_inner: 100,
            patience: 5,
            strategy: Strategy::AlsAdam,
            sparsity_penalty: true,
            seed: 0,
            time_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidWindow(self.window));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.bandwidth));
        }
        if !(self.lambda_t >= 0.0 && self.lambda_t.is_finite()) {
            return bad(format!(
                "lambda_t must be non-negative, got {}",
                self.lambda_t
            ));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return bad(format!(
                "lambda_r must be non-negative, got {}",
                self.lambda_r
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_inner == 0 {
            return bad("max_inner must be at least 1".into());
        }
        Ok(())
    }
}

/// Metrics recorded after one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// One-based.
    pub iteration: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub val_mae: f64,
    /// Gradient epochs run during this iteration, summed over modes.
    pub inner_epochs: usize,
    /// Wall-clock seconds since the start of training.
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoppingReason {
    MaxOuter,
    Patience,
    TimeBudget,
}

impl fmt::Display for StoppingReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoppingReason::MaxOuter => "max_outer",
            StoppingReason::Patience => "patience",
            StoppingReason::TimeBudget => "time_budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub records: Vec<IterationRecord>,
    /// Iteration whose model was returned; `None` when no iteration ran.
    pub best_iteration: Option<usize>,
    pub stopping_reason: StoppingReason,
}

impl FitReport {
    pub fn best(&self) -> Option<&IterationRecord> {
        self.best_iteration.map(|i| &self.records[i - 1])
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub const CSV_HEADER: &'static str =
        "iteration,train_rmse,val_rmse,val_mae,inner_epochs,seconds";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{:.6}",
                r.iteration, r.train_rmse, r.val_rmse, r.val_mae, r.inner_epochs, r.seconds
            )?;
        }
        Ok(())
    }
}

/// Builds the smoothing tables a fit uses for `train`.
pub fn smoothing_for(train: &SparseTensor, config: &TrainConfig) -> Result<SmoothingSpec> {
    if config.sparsity_penalty {
        SmoothingSpec::new(&train.slice_census(), config.window, config.bandwidth)
    } else {
        SmoothingSpec::uniform(train.time_len(), config.window, config.bandwidth)
    }
}

/// Trains a model on `train`, early-stopping on `validation`.
pub fn fit(
    train: &SparseTensor,
    validation: &SparseTensor,
    config: &TrainConfig,
) -> Result<(FactorModel, FitReport)> {
    config.validate()?;
    let spec = if config.lambda_t > 0.0 {
        Some(smoothing_for(train, config)?)
    } else {
        None
    };
    fit_with_smoothing(train, validation, config, spec.as_ref())
}

/// [`fit`] with caller-supplied smoothing tables. `spec` may be `None` only
/// when `lambda_t` is zero.
pub fn fit_with_smoothing(
    train: &SparseTensor,
    validation: &SparseTensor,
    config: &TrainConfig,
    spec: Option<&SmoothingSpec>,
) -> Result<(FactorModel, FitReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if validation.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if train.dims() != validation.dims() || train.time_mode() != validation.time_mode() {
        return Err(Error::Shape(format!(
            "train dims {:?} (time mode {}) differ from validation dims {:?} (time mode {})",
            train.dims(),
            train.time_mode(),
            validation.dims(),
            validation.time_mode()
        )));
    }
    if config.lambda_t > 0.0 {
        match spec {
            Some(s) if s.time_len() == train.time_len() => {}
            Some(s) => {
                return Err(Error::Shape(format!(
                    "smoothing tables cover {} time indices, tensor has {}",
                    s.time_len(),
                    train.time_len()
                )))
            }
            None => {
                return Err(Error::Config(
                    "lambda_t > 0 requires smoothing tables".into(),
                ))
            }
        }
    }
    let model = FactorModel::init(train.dims(), config.rank, train.time_mode(), config.seed)?;
    Trainer::new(train, validation, config, spec, model).run()
}

struct Trainer<'a> {
    train: &'a SparseTensor,
    validation: &'a SparseTensor,
    config: &'a TrainConfig,
    smoothing: Option<(&'a SmoothingSpec, f64)>,
    index: TensorIndex,
    model: FactorModel,
    adam: Vec<AdamState>,
    scale: f64,
    started: Instant,
}

impl<'a> Trainer<'a> {
    fn new(
        train: &'a SparseTensor,
        validation: &'a SparseTensor,
        config: &'a TrainConfig,
        spec: Option<&'a SmoothingSpec>,
        model: FactorModel,
    ) -> Self {
        let adam = model.factors().iter().map(AdamState::for_matrix).collect();
        Trainer {
            train,
            validation,
            config,
            smoothing: spec
                .filter(|_| config.lambda_t > 0.0)
                .map(|s| (s, config.lambda_t)),
            index: TensorIndex::build(train),
            model,
            adam,
            scale: 1.0 / train.nnz() as f64,
            started: Instant::now(),
        }
    }

    fn out_of_time(&self) -> bool {
        self.config
            .time_budget
            .is_some_and(|b| self.started.elapsed() >= b)
    }

    fn val_rmse(&self) -> Result<f64> {
        let rmse = self.model.evaluate(self.validation)?.rmse;
        if rmse.is_finite() {
            Ok(rmse)
        } else {
            Err(Error::Divergence("validation RMSE is not finite".into()))
        }
    }

    fn run(mut self) -> Result<(FactorModel, FitReport)> {
        let time_mode = self.model.time_mode();
        let order = self.model.order();
        let mut records = Vec::new();
        let mut best: Option<(f64, usize, FactorModel)> = None;
        // Iteration 1 has no predecessor, so it never counts as a rise.
        let mut prev_val = f64::INFINITY;
        let mut rises = 0;
        let mut reason = StoppingReason::MaxOuter;

        for iteration in 1..=self.config.max_outer {
            let inner_epochs = self
                .outer_step(order, time_mode)
                .map_err(|e| with_context(e, iteration))?;

            let train_rmse = self.model.evaluate(self.train)?.rmse;
            let val = self.model.evaluate(self.validation)?;
            if !train_rmse.is_finite() || !val.rmse.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite RMSE at outer iteration {iteration}"
                )));
            }
            records.push(IterationRecord {
                iteration,
                train_rmse,
                val_rmse: val.rmse,
                val_mae: val.mae,
                inner_epochs,
                seconds: self.started.elapsed().as_secs_f64(),
            });
            if best.as_ref().is_none_or(|(b, _, _)| val.rmse < *b) {
                best = Some((val.rmse, iteration, self.model.clone()));
            }
            rises = if val.rmse > prev_val { rises + 1 } else { 0 };
            prev_val = val.rmse;
            if rises >= self.config.patience {
                reason = StoppingReason::Patience;
                break;
            }
            if self.out_of_time() {
                reason = StoppingReason::TimeBudget;
                break;
            }
        }

        let (model, best_iteration) = match best {
            Some((_, it, m)) => (m, Some(it)),
            None => (self.model, None),
        };
        Ok((
            model,
            FitReport {
                records,
                best_iteration,
                stopping_reason: reason,
            },
        ))
    }

    /// Runs one outer iteration; returns the number of gradient epochs.
    fn outer_step(&mut self, order: usize, time_mode: usize) -> Result<usize> {
        let mut epochs = 0;
        match self.config.strategy {
            Strategy::AlsAdam | Strategy::AlsSgd => {
                for mode in 0..order {
                    if mode == time_mode {
                        epochs += self.descend(&[mode])?;
                    } else {
                        self.closed_form(mode)?;
                    }
                }
            }
            Strategy::AltAdam => {
                for mode in 0..order {
                    epochs += self.descend(&[mode])?;
                }
            }
            Strategy::Adam | Strategy::Sgd => {
                let modes: Vec<usize> = (0..order).collect();
                epochs += self.descend(&modes)?;
            }
        }
        Ok(epochs)
    }

    fn closed_form(&mut self, mode: usize) -> Result<()> {
        rowwise::rowwise_update_indexed(
            &mut self.model,
            self.train,
            mode,
            self.config.lambda_r,
            self.index.mode(mode),
        )
    }

    /// Gradient epochs on `modes` jointly until validation RMSE rises.
    fn descend(&mut self, modes: &[usize]) -> Result<usize> {
        let mut prev = self.val_rmse()?;
        for epoch in 1..=self.config.max_inner {
            let grads: Vec<_> = modes
                .iter()
                .map(|&mode| {
                    gradient::mode_gradient(
                        &self.model,
                        self.train,
                        mode,
                        self.index.mode(mode),
                        self.smoothing,
                        self.config.lambda_r,
                        self.scale,
                    )
                })
                .collect();
            for (&mode, grad) in modes.iter().zip(&grads) {
                let param = self.model.factor_mut(mode);
                if self.config.strategy.uses_adam() {
                    adam_step(param, grad, &mut self.adam[mode], self.config.learning_rate)?;
                } else {
                    sgd_step(param, grad, self.config.learning_rate)?;
                }
            }
            let val = self.val_rmse()?;
            if val > prev || self.out_of_time() {
                return Ok(epoch);
            }
            prev = val;
        }
        Ok(self.config.max_inner)
    }
}

fn with_context(err: Error, iteration: usize) -> Error {
    match err {
        Error::Divergence(msg) => {
            Error::Divergence(format!("{msg} at outer iteration {iteration}"))
        }
        other => other,
    }
}
