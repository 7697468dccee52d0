//! Time-aware CP decomposition of sparse temporal tensors.
//!
//! A rank-`K` CP model is fit to the observed entries of an N-mode tensor
//! with one time mode. The time factor is regularized toward a
//! Gaussian-kernel smoothing of its neighboring rows, more strongly on time
//! slices with few observations. Non-time factors are updated by exact
//! row-wise least squares and the time factor by Adam.
//!
//! ```no_run
//! use tatd::{fit, IndexBase, SparseTensor, TrainConfig};
//!
//! let x = SparseTensor::ingest("data.tsv", 3, 0, IndexBase::One)?;
//! let (z, _stats) = x.z_normalize()?;
//! let split = z.split(0)?;
//! let (model, report) = fit(&split.train, &split.validation, &TrainConfig::default())?;
//! println!("test {:?} after {} iterations", model.evaluate(&split.test)?, report.records.len());
//! # Ok::<(), tatd::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod smoothing;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{CheckpointMeta, FactorModel, LossBreakdown, Metrics};
pub use optim::{fit, FitReport, Strategy, TrainConfig};
pub use smoothing::SmoothingSpec;
pub use tensor::{IndexBase, Normalization, SliceCensus, SparseTensor, SplitDataset};
