//! CP factor model: reconstruction, objective, metrics and checkpoints.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::smoothing::SmoothingSpec;
use crate::tensor::{Normalization, SparseTensor};

/// Entries per chunk when reducing over a tensor. Fixed so parallel sums are
/// combined in the same order regardless of thread count.
const CHUNK: usize = 4096;

/// Factor matrices `A^(1) .. A^(N)` of a rank-`K` CP model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    factors: Vec<Matrix>,
    rank: usize,
    time_mode: usize,
}

/// The three summands of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Squared reconstruction error over observed entries.
    pub fit_sse: f64,
    /// `Σ_t λ_t β_t ||a_t - ã_t||²`.
    pub smooth_term: f64,
    /// `λ_r Σ_{n≠t} ||A^(n)||_F²`.
    pub ridge_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
}

impl FactorModel {
    /// Random model with entries uniform on `[0, 1/sqrt(K))`.
    pub fn init(dims: &[usize], rank: usize, time_mode: usize, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if time_mode >= dims.len() {
            return Err(Error::Shape(format!(
                "time mode {time_mode} out of range for dims {dims:?}"
            )));
        }
        let scale = 1.0 / (rank as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = dims
            .iter()
            .map(|&rows| Matrix::from_fn(rows, rank, |_, _| rng.gen::<f64>() * scale))
            .collect();
        Ok(FactorModel {
            factors,
            rank,
            time_mode,
        })
    }

    pub fn from_factors(factors: Vec<Matrix>, time_mode: usize) -> Result<Self> {
        let rank = factors
            .first()
            .map(Matrix::cols)
            .ok_or_else(|| Error::Shape("model needs at least one factor matrix".into()))?;
        if rank == 0 || factors.iter().any(|f| f.cols() != rank) {
            return Err(Error::Shape(
                "factor matrices must share a positive rank".into(),
            ));
        }
        if time_mode >= factors.len() {
            return Err(Error::Shape(format!(
                "time mode {time_mode} out of range for {} factors",
                factors.len()
            )));
        }
        Ok(FactorModel {
            factors,
            rank,
            time_mode,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn time_mode(&self) -> usize {
        self.time_mode
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut Matrix {
        &mut self.factors[mode]
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn time_factor(&self) -> &Matrix {
        &self.factors[self.time_mode]
    }

    /// Reconstructed value `Σ_k Π_n a^(n)_{i_n k}`.
    pub fn predict(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.order()
            || index.iter().zip(&self.factors).any(|(&i, f)| i >= f.rows())
        {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                dims: self.dims(),
            });
        }
        Ok(self.predict_unchecked(index))
    }

    pub(crate) fn predict_unchecked(&self, index: &[usize]) -> f64 {
        (0..self.rank)
            .map(|k| {
                index
                    .iter()
                    .zip(&self.factors)
                    .map(|(&i, f)| f[(i, k)])
                    .product::<f64>()
            })
            .sum()
    }

    /// Fills `out[k] = Π_{l≠skip} a^(l)_{i_l k}`.
    pub(crate) fn partial_product(&self, index: &[usize], skip: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 1.0);
        for (mode, (&i, f)) in index.iter().zip(&self.factors).enumerate() {
            if mode == skip {
                continue;
            }
            for (o, a) in out.iter_mut().zip(f.row(i)) {
                *o *= a;
            }
        }
    }

    pub(crate) fn check_compatible(&self, x: &SparseTensor) -> Result<()> {
        if x.dims() != self.dims().as_slice() {
            return Err(Error::Shape(format!(
                "tensor dims {:?} do not match model dims {:?}",
                x.dims(),
                self.dims()
            )));
        }
        if x.time_mode() != self.time_mode {
            return Err(Error::Shape(format!(
                "tensor time mode {} differs from model time mode {}",
                x.time_mode(),
                self.time_mode
            )));
        }
        Ok(())
    }

    /// Sum of squared residuals over the tensor's entries.
    pub fn sse(&self, x: &SparseTensor) -> Result<f64> {
        self.check_compatible(x)?;
        Ok(self.reduce(x, |r| r * r))
    }

    fn reduce(&self, x: &SparseTensor, f: impl Fn(f64) -> f64 + Sync) -> f64 {
        let n = x.nnz();
        let partials: Vec<f64> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                (c * CHUNK..((c + 1) * CHUNK).min(n))
                    .map(|e| f(x.value(e) - self.predict_unchecked(x.index(e))))
                    .sum::<f64>()
            })
            .collect();
        partials.iter().sum()
    }

    /// Training objective split into its summands.
    pub fn loss(
        &self,
        train: &SparseTensor,
        spec: &SmoothingSpec,
        lambda_t: f64,
        lambda_r: f64,
    ) -> Result<LossBreakdown> {
        self.check_compatible(train)?;
        if spec.time_len() != self.time_factor().rows() {
            return Err(Error::Shape(format!(
                "smoothing tables cover {} time indices, model has {}",
                spec.time_len(),
                self.time_factor().rows()
            )));
        }
        let fit_sse = self.reduce(train, |r| r * r);
        let smooth_term = if lambda_t == 0.0 {
            0.0
        } else {
            let res = spec.residuals(self.time_factor());
            (0..res.rows())
                .map(|t| lambda_t * spec.penalty(t) * res.row(t).iter().map(|r| r * r).sum::<f64>())
                .sum()
        };
        let ridge_term = lambda_r
            * self
                .factors
                .iter()
                .enumerate()
                .filter(|&(n, _)| n != self.time_mode)
                .map(|(_, f)| f.frobenius_sq())
                .sum::<f64>();
        Ok(LossBreakdown {
            fit_sse,
            smooth_term,
            ridge_term,
            total: fit_sse + smooth_term + ridge_term,
        })
    }

    /// RMSE and MAE over the holdout entries.
    pub fn evaluate(&self, holdout: &SparseTensor) -> Result<Metrics> {
        if holdout.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        self.check_compatible(holdout)?;
        let n = holdout.nnz() as f64;
        let sse = self.reduce(holdout, |r| r * r);
        let sae = self.reduce(holdout, f64::abs);
        Ok(Metrics {
            rmse: (sse / n).sqrt(),
            mae: sae / n,
        })
    }

    /// Writes `factor_<n>.csv` (one-based `n`) and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, meta: &CheckpointMeta) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (n, f) in self.factors.iter().enumerate() {
            let path = dir.join(factor_file_name(n));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_rows(BufWriter::new(file), f).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(meta).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a checkpoint written by [`FactorModel::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, CheckpointMeta)> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if meta.time_mode == 0 || meta.time_mode > meta.dims.len() {
            return Err(Error::Checkpoint(format!(
                "time_mode {} out of range for {} modes",
                meta.time_mode,
                meta.dims.len()
            )));
        }
        let mut factors = Vec::with_capacity(meta.dims.len());
        for (n, &rows) in meta.dims.iter().enumerate() {
            let path = dir.join(factor_file_name(n));
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut data = Vec::with_capacity(rows * meta.rank);
            let mut count = 0;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let before = data.len();
                for field in line.split(',') {
                    let v: f64 = field.trim().parse().map_err(|_| {
                        Error::Checkpoint(format!(
                            "{} line {}: bad number {field:?}",
                            path.display(),
                            lineno + 1
                        ))
                    })?;
                    data.push(v);
                }
                if data.len() - before != meta.rank {
                    return Err(Error::Checkpoint(format!(
                        "{} line {}: expected {} columns",
                        path.display(),
                        lineno + 1,
                        meta.rank
                    )));
                }
                count += 1;
            }
            if count != rows {
                return Err(Error::Checkpoint(format!(
                    "{}: expected {rows} rows, found {count}",
                    path.display()
                )));
            }
            factors.push(Matrix::from_vec(rows, meta.rank, data));
        }
        let model = FactorModel::from_factors(factors, meta.time_mode - 1)?;
        Ok((model, meta))
    }
}

fn write_rows<W: Write>(mut w: W, f: &Matrix) -> std::io::Result<()> {
    for r in 0..f.rows() {
        let row: Vec<String> = f.row(r).iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn factor_file_name(mode: usize) -> String {
    format!("factor_{}.csv", mode + 1)
}

/// Metadata stored next to the factor files of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: Vec<usize>,
    pub rank: usize,
    /// One-based.
    pub time_mode: usize,
    pub normalization: Normalization,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn for_model(model: &FactorModel, normalization: Normalization, seed: u64) -> Self {
        CheckpointMeta {
            dims: model.dims(),
            rank: model.rank(),
            time_mode: model.time_mode() + 1,
            normalization,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SliceCensus;
    use proptest::prelude::{any, prop_assert, prop_assume, proptest};

    fn model(factors: Vec<Vec<Vec<f64>>>) -> FactorModel {
        let factors = factors
            .into_iter()
            .map(|rows| {
                let k = rows[0].len();
                Matrix::from_vec(rows.len(), k, rows.concat())
            })
            .collect();
        FactorModel::from_factors(factors, 0).unwrap()
    }

    /// Independent N-nested-loop reconstruction over a dense enumeration.
    fn brute_force(model: &FactorModel, index: &[usize]) -> f64 {
        let mut total = 0.0;
        for k in 0..model.rank() {
            let mut prod = 1.0;
            for n in 0..model.order() {
                prod *= model.factor(n).row(index[n])[k];
            }
            total += prod;
        }
        total
    }

    #[test]
    fn predict_examples() {
        let m = model(vec![vec![vec![2.0]], vec![vec![3.0]]]);
        assert_eq!(m.predict(&[0, 0]).unwrap(), 6.0);

        let m = model(vec![
            vec![vec![1.0, 1.0]],
            vec![vec![1.0, 2.0]],
            vec![vec![1.0, 3.0]],
        ]);
        assert_eq!(m.predict(&[0, 0, 0]).unwrap(), 7.0);

        let mut m = FactorModel::init(&[3, 4, 2], 3, 0, 1).unwrap();
        m.factor_mut(1).as_mut_slice().fill(0.0);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(m.predict(&[i, j, 1]).unwrap(), 0.0);
            }
        }
        assert!(matches!(
            m.predict(&[3, 0, 0]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(m.predict(&[0, 0]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = FactorModel::init(&[5, 4, 3], 4, 2, 9).unwrap();
        assert_eq!(a, FactorModel::init(&[5, 4, 3], 4, 2, 9).unwrap());
        assert_ne!(a, FactorModel::init(&[5, 4, 3], 4, 2, 10).unwrap());
        assert!(a
            .factors()
            .iter()
            .all(|f| f.as_slice().iter().all(|&v| (0.0..0.5).contains(&v))));
        let b = FactorModel::init(&[50], 1, 0, 3).unwrap();
        assert!(b
            .factor(0)
            .as_slice()
            .iter()
            .all(|&v| (0.0..1.0).contains(&v)));
        assert!(FactorModel::init(&[2], 0, 0, 0).is_err());
    }

    #[test]
    fn init_inner_product_expectation() {
        // E[Σ_k u_k v_k] with u, v ~ U[0, 1/√K) is K * (1/(2√K))² = 1/4.
        for rank in [1usize, 4, 10] {
            let draws = 100_000;
            let m = FactorModel::init(&[draws, draws], rank, 0, 5).unwrap();
            let mean: f64 = (0..draws)
                .map(|i| {
                    m.factor(0)
                        .row(i)
                        .iter()
                        .zip(m.factor(1).row(i))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / draws as f64;
            assert!((mean - 0.25).abs() < 0.25 * 0.05, "rank {rank}: {mean}");
        }
    }

    #[test]
    fn evaluate_examples() {
        let m = model(vec![vec![vec![0.0], vec![0.0]], vec![vec![1.0]]]);
        let x = SparseTensor::from_entries(vec![2, 1], 0, [(vec![0, 0], 0.0), (vec![1, 0], 0.0)])
            .unwrap();
        assert_eq!(
            m.evaluate(&x).unwrap(),
            Metrics {
                rmse: 0.0,
                mae: 0.0
            }
        );

        let x = x.with_values(vec![1.0, -1.0]).unwrap();
        assert_eq!(
            m.evaluate(&x).unwrap(),
            Metrics {
                rmse: 1.0,
                mae: 1.0
            }
        );

        let x = x.with_values(vec![3.0, 4.0]).unwrap();
        let got = m.evaluate(&x).unwrap();
        assert!((got.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(got.mae, 3.5);

        let empty = SparseTensor::new(vec![2, 1], 0, vec![], vec![]).unwrap();
        assert!(matches!(m.evaluate(&empty), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn loss_examples() {
        // Time factor constant across rows, exact reconstruction.
        let m = model(vec![
            vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]],
            vec![vec![0.5, 1.0], vec![2.0, -1.0]],
        ]);
        let entries: Vec<_> = (0..3)
            .flat_map(|t| (0..2).map(move |j| vec![t, j]))
            .map(|idx| {
                let v = m.predict(&idx).unwrap();
                (idx, v)
            })
            .collect();
        let x = SparseTensor::from_entries(vec![3, 2], 0, entries).unwrap();
        let spec = SmoothingSpec::new(&x.slice_census(), 3, 0.5).unwrap();
        let l = m.loss(&x, &spec, 10.0, 0.0).unwrap();
        assert_eq!(l.fit_sse, 0.0);
        assert_eq!(l.smooth_term, 0.0);

        let x = x
            .with_values(x.values().iter().map(|v| v + 1.0).collect())
            .unwrap();
        let l = m.loss(&x, &spec, 0.0, 0.0).unwrap();
        assert_eq!(l.total, l.fit_sse);
        assert!((l.fit_sse - 6.0).abs() < 1e-12);

        let ridge = m.loss(&x, &spec, 0.0, 0.5).unwrap();
        assert!((ridge.ridge_term - 0.5 * (0.25 + 1.0 + 4.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_single_entry_zero_model() {
        let m = model(vec![vec![vec![0.0], vec![0.0]], vec![vec![0.0]]]);
        let x = SparseTensor::from_entries(vec![2, 1], 0, [(vec![0, 0], 1.0)]).unwrap();
        let spec = SmoothingSpec::uniform(2, 3, 0.5).unwrap();
        assert_eq!(m.loss(&x, &spec, 1.0, 1.0).unwrap().fit_sse, 1.0);
    }

    #[test]
    fn loss_rejects_mismatched_shapes() {
        let m = FactorModel::init(&[3, 2], 2, 0, 0).unwrap();
        let x = SparseTensor::from_entries(vec![4, 2], 0, [(vec![0, 0], 1.0)]).unwrap();
        let spec = SmoothingSpec::uniform(4, 3, 0.5).unwrap();
        assert!(matches!(m.loss(&x, &spec, 1.0, 1.0), Err(Error::Shape(_))));
        let x = SparseTensor::from_entries(vec![3, 2], 0, [(vec![0, 0], 1.0)]).unwrap();
        assert!(matches!(m.loss(&x, &spec, 1.0, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FactorModel::init(&[4, 3, 5], 2, 2, 17).unwrap();
        let meta = CheckpointMeta::for_model(
            &m,
            Normalization {
                mean: 1.5,
                std: 0.25,
            },
            17,
        );
        m.save(dir.path(), &meta).unwrap();
        let (back, back_meta) = FactorModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_meta, meta);
        assert_eq!(back_meta.time_mode, 3);
    }

    fn random_case(seed: u64) -> (FactorModel, SparseTensor, SmoothingSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = vec![
            rng.gen_range(2..7),
            rng.gen_range(1..5),
            rng.gen_range(1..4),
        ];
        let rank = rng.gen_range(1..5);
        let mut m = FactorModel::init(&dims, rank, 0, seed).unwrap();
        for n in 0..3 {
            m.factor_mut(n)
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let mut entries = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    if rng.gen_bool(0.6) {
                        entries.push((vec![i, j, k], rng.gen_range(-2.0..2.0)));
                    }
                }
            }
        }
        let x = SparseTensor::from_entries(dims, 0, entries).unwrap();
        let spec = SmoothingSpec::new(&x.slice_census(), 3, 0.7).unwrap();
        (m, x, spec)
    }

    proptest! {
        #[test]
        fn predict_matches_brute_force(seed in any::<u64>()) {
            let (m, x, _) = random_case(seed);
            for (idx, _) in x.iter() {
                let fast = m.predict(idx).unwrap();
                let slow = brute_force(&m, idx);
                prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
            }
        }

        #[test]
        fn unpenalized_loss_matches_oracle(seed in any::<u64>()) {
            let (m, x, spec) = random_case(seed);
            let oracle: f64 = x.iter().map(|(idx, v)| (v - brute_force(&m, idx)).powi(2)).sum();
            let l = m.loss(&x, &spec, 0.0, 0.0).unwrap();
            prop_assert!((l.total - oracle).abs() <= 1e-10 * oracle.max(1.0));
        }

        #[test]
        fn loss_invariant_under_rank_permutation(seed in any::<u64>(), lt in 0.0f64..5.0, lr in 0.0f64..5.0) {
            let (m, x, spec) = random_case(seed);
            let k = m.rank();
            let perm: Vec<usize> = (0..k).rev().collect();
            let permuted = FactorModel::from_factors(
                m.factors().iter().map(|f| Matrix::from_fn(f.rows(), k, |r, c| f[(r, perm[c])])).collect(),
                m.time_mode(),
            ).unwrap();
            let a = m.loss(&x, &spec, lt, lr).unwrap();
            let b = permuted.loss(&x, &spec, lt, lr).unwrap();
            prop_assert!((a.total - b.total).abs() <= 1e-9 * a.total.abs().max(1.0));
            prop_assert!((a.total - (a.fit_sse + a.smooth_term + a.ridge_term)).abs() <= 1e-9 * a.total.abs());
        }

        #[test]
        fn mae_never_exceeds_rmse(seed in any::<u64>()) {
            let (m, x, _) = random_case(seed);
            prop_assume!(!x.is_empty());
            let got = m.evaluate(&x).unwrap();
            prop_assert!(got.rmse >= 0.0);
            prop_assert!(got.mae <= got.rmse + 1e-12);
        }
    }

    #[test]
    fn census_based_spec_matches_time_len() {
        let (_, x, spec) = random_case(3);
        assert_eq!(spec.time_len(), x.time_len());
        assert_eq!(SliceCensus::from_counts(vec![]).len(), 0);
    }
}
