//! C ABI for `tatd`.
//!
//! Every fallible function returns a `TatdStatus`. On failure a
//! description is available from `tatd_last_error_message` on the same
//! thread. Handles returned through out-parameters are owned by the caller
//! and released with the matching `_free` function. Indices passed across
//! this interface are zero-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use tatd::{
    fit, CheckpointMeta, Error, FactorModel, IndexBase, Normalization, SparseTensor, Strategy,
    TrainConfig,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TatdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Shape = 6,
    Numeric = 7,
    Checkpoint = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TatdStrategy {
    AlsAdam = 0,
    Adam = 1,
    Sgd = 2,
    AlsSgd = 3,
    AltAdam = 4,
}

/// Training settings. Start from `tatd_config_default()`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TatdConfig {
    pub rank: usize,
    pub window: usize,
    pub sigma: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub learning_rate: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub patience: usize,
    pub strategy: TatdStrategy,
    /// Scale smoothing by per-slice sparsity.
    pub sparsity_penalty: bool,
    pub seed: u64,
}

/// Outcome of `tatd_fit`. Errors are in the normalized scale; multiply by
/// `norm_std` for the original scale.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TatdFitSummary {
    pub iterations: usize,
    /// One-based; 0 when no iteration ran.
    pub best_iteration: usize,
    pub val_rmse: f64,
    pub test_rmse: f64,
    pub test_mae: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
}

/// Opaque sparse tensor.
pub struct TatdTensor {
    inner: SparseTensor,
}

/// Opaque fitted model with its normalization statistics.
pub struct TatdModel {
    model: FactorModel,
    normalization: Normalization,
    seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TatdStatus {
    match e {
        Error::Io { .. } => TatdStatus::Io,
        Error::Parse { .. } | Error::DuplicateEntry { .. } => TatdStatus::Parse,
        Error::DegenerateData(_)
        | Error::InsufficientData { .. }
        | Error::EmptyEvaluation
        | Error::EmptyNeighborhood(_) => TatdStatus::Data,
        Error::InvalidWindow(_) | Error::Config(_) => TatdStatus::InvalidArgument,
        Error::IndexOutOfRange { .. } | Error::Shape(_) => TatdStatus::Shape,
        Error::Singular { .. } | Error::Divergence(_) => TatdStatus::Numeric,
        Error::Checkpoint(_) => TatdStatus::Checkpoint,
    }
}

struct Failure(TatdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TatdStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TatdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TatdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TatdStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            TatdStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn strategy_of(s: TatdStrategy) -> Strategy {
    match s {
        TatdStrategy::AlsAdam => Strategy::AlsAdam,
        TatdStrategy::Adam => Strategy::Adam,
        TatdStrategy::Sgd => Strategy::Sgd,
        TatdStrategy::AlsSgd => Strategy::AlsSgd,
        TatdStrategy::AltAdam => Strategy::AltAdam,
    }
}

fn config_of(c: &TatdConfig) -> TrainConfig {
    TrainConfig {
        rank: c.rank,
        window: c.window,
        bandwidth: c.sigma,
        lambda_t: c.lambda_t,
        lambda_r: c.lambda_r,
        learning_rate: c.learning_rate,
        max_outer: c.max_outer,
        max_inner: c.max_inner,
        patience: c.patience,
        strategy: strategy_of(c.strategy),
        sparsity_penalty: c.sparsity_penalty,
        seed: c.seed,
        time_budget: None,
    }
}

/// Message describing the most recent failure on this thread, or null when
/// there was none. The pointer stays valid until the next failing call on
/// the same thread.
#[no_mangle]
pub extern "C" fn tatd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tatd_config_default() -> TatdConfig {
    let d = TrainConfig::default();
    TatdConfig {
        rank: d.rank,
        window: d.window,
        sigma: d.bandwidth,
        lambda_t: d.lambda_t,
        lambda_r: d.lambda_r,
        learning_rate: d.learning_rate,
        max_outer: d.max_outer,
        max_inner: d.max_inner,
        patience: d.patience,
        strategy: TatdStrategy::AlsAdam,
        sparsity_penalty: d.sparsity_penalty,
        seed: d.seed,
    }
}

/// Reads a delimited tensor file (indices then value on each line).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tatd_tensor_load(
    path: *const c_char,
    order: usize,
    time_mode: usize,
    one_based: bool,
    out: *mut *mut TatdTensor,
) -> TatdStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let base = if one_based {
            IndexBase::One
        } else {
            IndexBase::Zero
        };
        let inner = SparseTensor::ingest(path, order, time_mode, base)?;
        *out = Box::into_raw(Box::new(TatdTensor { inner }));
        Ok(())
    })
}

/// Builds a tensor from coordinate arrays. `indices` holds `nnz * order`
/// zero-based indices, entry by entry.
///
/// # Safety
/// Array arguments must be valid for the stated lengths and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tatd_tensor_from_coo(
    order: usize,
    dims: *const usize,
    time_mode: usize,
    nnz: usize,
    indices: *const usize,
    values: *const f64,
    out: *mut *mut TatdTensor,
) -> TatdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dims = slice_arg(dims, order, "dims")?;
        let len = nnz
            .checked_mul(order)
            .ok_or_else(|| Failure(TatdStatus::InvalidArgument, "nnz * order overflows".into()))?;
        let indices = slice_arg(indices, len, "indices")?;
        let values = slice_arg(values, nnz, "values")?;
        let inner = SparseTensor::new(dims.to_vec(), time_mode, indices.to_vec(), values.to_vec())?;
        *out = Box::into_raw(Box::new(TatdTensor { inner }));
        Ok(())
    })
}

/// Number of stored entries; 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tatd_tensor_nnz(tensor: *const TatdTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.nnz())
}

/// # Safety
/// `tensor` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tatd_tensor_free(tensor: *mut TatdTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Normalizes the tensor, splits it into train, validation and test parts
/// using `config.seed`, fits a model on the training part and evaluates it.
/// `summary` may be null.
///
/// # Safety
/// `tensor` and `config` must be live, `out` writable, `summary` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tatd_fit(
    tensor: *const TatdTensor,
    config: *const TatdConfig,
    out: *mut *mut TatdModel,
    summary: *mut TatdFitSummary,
) -> TatdStatus {
    guard(|| {
        let tensor = tensor.as_ref().ok_or_else(|| null("tensor"))?;
        let config = config_of(config.as_ref().ok_or_else(|| null("config"))?);
        if out.is_null() {
            return Err(null("out"));
        }
        let (z, normalization) = tensor.inner.z_normalize()?;
        let split = z.split(config.seed)?;
        let (model, report) = fit(&split.train, &split.validation, &config)?;
        let val = model.evaluate(&split.validation)?;
        let test = model.evaluate(&split.test)?;
        if let Some(s) = summary.as_mut() {
            *s = TatdFitSummary {
                iterations: report.records.len(),
                best_iteration: report.best_iteration.unwrap_or(0),
                val_rmse: val.rmse,
                test_rmse: test.rmse,
                test_mae: test.mae,
                norm_mean: normalization.mean,
                norm_std: normalization.std,
            };
        }
        *out = Box::into_raw(Box::new(TatdModel {
            model,
            normalization,
            seed: config.seed,
        }));
        Ok(())
    })
}

/// Predicts `count` entries in the original scale. `indices` holds
/// `count * order` zero-based indices.
///
/// # Safety
/// `model` must be live and the arrays valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tatd_model_predict(
    model: *const TatdModel,
    count: usize,
    indices: *const usize,
    out: *mut f64,
) -> TatdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let order = m.model.order();
        let indices = slice_arg(indices, count * order, "indices")?;
        if count > 0 && out.is_null() {
            return Err(null("out"));
        }
        for (e, idx) in indices.chunks_exact(order).enumerate() {
            let p = m.model.predict(idx)?;
            *out.add(e) = m.normalization.invert(p);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tatd_model_rank(model: *const TatdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.rank())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tatd_model_order(model: *const TatdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.order())
}

/// Writes a checkpoint directory readable by the command-line tool.
///
/// # Safety
/// `model` must be live and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tatd_model_save(
    model: *const TatdModel,
    dir: *const c_char,
) -> TatdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let dir = path_arg(dir, "dir")?;
        let meta = CheckpointMeta::for_model(&m.model, m.normalization, m.seed);
        m.model.save(dir, &meta)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tatd_model_load(
    dir: *const c_char,
    out: *mut *mut TatdModel,
) -> TatdStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, meta) = FactorModel::load(dir)?;
        *out = Box::into_raw(Box::new(TatdModel {
            model,
            normalization: meta.normalization,
            seed: meta.seed,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tatd_model_free(model: *mut TatdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
