//! Sparse temporal tensors in coordinate (COO) format.
//!
//! Indices are zero-based in memory. Every text format read or written by this
//! module (entry files, census CSV) is one-based, matching the usual
//! `1 <= i_n <= I_n` convention for tensor data files.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// An N-mode tensor holding only its observed entries.
///
/// Immutable after construction; cheap to share across threads by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    time_mode: usize,
    /// Row-major `nnz x order` index table.
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Index base used by an entry file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexBase {
    #[default]
    One,
    Zero,
}

/// Observed-value statistics used to z-normalize a tensor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        mean: 0.0,
        std: 1.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-time-slice nonzero counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceCensus {
    pub counts: Vec<usize>,
    pub min: usize,
    pub max: usize,
}

/// Train/validation/test partition of one tensor's entries.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: SparseTensor,
    pub validation: SparseTensor,
    pub test: SparseTensor,
    pub seed: u64,
}

impl SparseTensor {
    /// Builds a tensor from a flat row-major index table.
    ///
    /// Fails if an index is out of range, an index tuple repeats, or the
    /// time mode does not exist.
    pub fn new(
        dims: Vec<usize>,
        time_mode: usize,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let order = dims.len();
        if order == 0 {
            return Err(Error::Shape("tensor must have at least one mode".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-length mode in dims {dims:?}")));
        }
        if time_mode >= order {
            return Err(Error::Shape(format!(
                "time mode {time_mode} out of range for a {order}-mode tensor"
            )));
        }
        if indices.len() != values.len() * order {
            return Err(Error::Shape(format!(
                "{} index components for {} values of a {order}-mode tensor",
                indices.len(),
                values.len()
            )));
        }
        let mut seen = HashSet::with_capacity(values.len());
        for (e, idx) in indices.chunks_exact(order).enumerate() {
            if idx.iter().zip(&dims).any(|(&i, &d)| i >= d) {
                return Err(Error::IndexOutOfRange {
                    index: idx.to_vec(),
                    dims: dims.clone(),
                });
            }
            if !seen.insert(idx) {
                return Err(Error::DuplicateEntry {
                    line: e + 1,
                    index: idx.to_vec(),
                });
            }
        }
        Ok(SparseTensor {
            dims,
            time_mode,
            indices,
            values,
        })
    }

    /// Builds a tensor from `(index, value)` pairs.
    pub fn from_entries<I>(dims: Vec<usize>, time_mode: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (idx, v) in entries {
            if idx.len() != dims.len() {
                return Err(Error::Shape(format!(
                    "index {idx:?} has {} components, tensor has {} modes",
                    idx.len(),
                    dims.len()
                )));
            }
            indices.extend_from_slice(&idx);
            values.push(v);
        }
        Self::new(dims, time_mode, indices, values)
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn time_mode(&self) -> usize {
        self.time_mode
    }

    pub fn time_len(&self) -> usize {
        self.dims[self.time_mode]
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, entry: usize) -> &[usize] {
        let n = self.order();
        &self.indices[entry * n..(entry + 1) * n]
    }

    pub fn value(&self, entry: usize) -> f64 {
        self.values[entry]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.order())
            .zip(self.values.iter().copied())
    }

    /// Same index set, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::Shape(format!(
                "{} replacement values for {} entries",
                values.len(),
                self.nnz()
            )));
        }
        Ok(SparseTensor {
            values,
            ..self.clone()
        })
    }

    /// Tensor restricted to the given entry positions, in the given order.
    pub fn select(&self, entries: &[usize]) -> SparseTensor {
        let n = self.order();
        let mut indices = Vec::with_capacity(entries.len() * n);
        let mut values = Vec::with_capacity(entries.len());
        for &e in entries {
            indices.extend_from_slice(self.index(e));
            values.push(self.values[e]);
        }
        SparseTensor {
            dims: self.dims.clone(),
            time_mode: self.time_mode,
            indices,
            values,
        }
    }

    /// Reads an entry file: `order` integer index columns then one value.
    ///
    /// The delimiter is taken from the first data line (comma, tab, or runs of
    /// spaces) and every later line must use the same one. Blank lines and
    /// lines starting with `#` are skipped. `dims` become the per-mode maximum
    /// index.
    pub fn read_delimited<R: BufRead>(
        reader: R,
        order: usize,
        time_mode: usize,
        base: IndexBase,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("number of modes must be positive".into()));
        }
        if time_mode >= order {
            return Err(Error::Config(format!(
                "time mode {} out of range for {order} modes",
                time_mode + 1
            )));
        }
        let mut delimiter: Option<Delimiter> = None;
        let mut dims = vec![0usize; order];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();

        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let delim = *delimiter.get_or_insert_with(|| Delimiter::detect(trimmed));
            let fields = delim.split(trimmed);
            if fields.len() != order + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!(
                        "expected {} columns ({order} indices + value), found {}",
                        order + 1,
                        fields.len()
                    ),
                });
            }
            let mut idx = Vec::with_capacity(order);
            for (mode, field) in fields[..order].iter().enumerate() {
                let raw: usize = field.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!(
                        "mode {} index {field:?} is not a non-negative integer",
                        mode + 1
                    ),
                })?;
                let i = match base {
                    IndexBase::Zero => raw,
                    IndexBase::One => raw.checked_sub(1).ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("mode {} index 0 in a one-based file", mode + 1),
                    })?,
                };
                dims[mode] = dims[mode].max(i + 1);
                idx.push(i);
            }
            let value: f64 = fields[order].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("value {:?} is not a number", fields[order]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("value {value} is not finite"),
                });
            }
            if !seen.insert(idx.clone()) {
                return Err(Error::DuplicateEntry {
                    line: lineno,
                    index: idx.iter().map(|i| i + 1).collect(),
                });
            }
            indices.extend_from_slice(&idx);
            values.push(value);
        }
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(SparseTensor {
            dims,
            time_mode,
            indices,
            values,
        })
    }

    /// Reads an entry file from disk. See [`SparseTensor::read_delimited`].
    pub fn ingest(
        path: impl AsRef<Path>,
        order: usize,
        time_mode: usize,
        base: IndexBase,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_delimited(BufReader::new(file), order, time_mode, base)
    }

    /// Writes one-based entries, one per line.
    pub fn write_delimited<W: Write>(&self, mut w: W, delimiter: char) -> std::io::Result<()> {
        for (idx, v) in self.iter() {
            for i in idx {
                write!(w, "{}{delimiter}", i + 1)?;
            }
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, delimiter: char) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_delimited(&mut w, delimiter)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Z-scores the observed values with their mean and population standard
    /// deviation.
    pub fn z_normalize(&self) -> Result<(SparseTensor, Normalization)> {
        let n = self.nnz();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let mean = self.values.iter().sum::<f64>() / n as f64;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::DegenerateData(format!(
                "observed values have zero variance (all equal to {mean})"
            )));
        }
        let stats = Normalization { mean, std };
        let values = self.values.iter().map(|&v| stats.apply(v)).collect();
        Ok((self.with_values(values)?, stats))
    }

    /// Random 8:1:1 split by a seeded uniform permutation of entry order.
    ///
    /// Validation and test each get `nnz / 10` entries rounded to the nearest
    /// integer; training keeps the remainder, so every part is within one
    /// entry of its exact share.
    pub fn split(&self, seed: u64) -> Result<SplitDataset> {
        let n = self.nnz();
        if n < 10 {
            return Err(Error::InsufficientData { needed: 10, got: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let holdout = (n + 5) / 10;
        let train_len = n - 2 * holdout;
        let (train, rest) = order.split_at(train_len);
        let (validation, test) = rest.split_at(holdout);
        Ok(SplitDataset {
            train: self.select(train),
            validation: self.select(validation),
            test: self.select(test),
            seed,
        })
    }

    /// Nonzero count of every time slice.
    pub fn slice_census(&self) -> SliceCensus {
        let mut counts = vec![0usize; self.time_len()];
        for e in 0..self.nnz() {
            counts[self.index(e)[self.time_mode]] += 1;
        }
        SliceCensus::from_counts(counts)
    }
}

impl SliceCensus {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let min = counts.iter().copied().min().unwrap_or(0);
        let max = counts.iter().copied().max().unwrap_or(0);
        SliceCensus { counts, min, max }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Two-column CSV: `time_index,nonzero_count`, one-based time index.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_index,nonzero_count")?;
        for (t, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{c}", t + 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    Comma,
    Tab,
    Whitespace,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains(',') {
            Delimiter::Comma
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Whitespace
        }
    }

    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, order: usize, base: IndexBase) -> Result<SparseTensor> {
        SparseTensor::read_delimited(text.as_bytes(), order, 0, base)
    }

    fn with_values(values: &[f64]) -> SparseTensor {
        SparseTensor::from_entries(
            vec![values.len(), 1],
            0,
            values.iter().enumerate().map(|(i, &v)| (vec![i, 0], v)),
        )
        .unwrap()
    }

    #[test]
    fn ingest_sets_dims_to_max_index() {
        let t = parse("1 1 1 5.0\n2 1 1 7.0\n", 3, IndexBase::One).unwrap();
        assert_eq!(t.dims(), &[2, 1, 1]);
        assert_eq!(t.nnz(), 2);
        assert_eq!(t.index(1), &[1, 0, 0]);
        assert_eq!(t.value(1), 7.0);
    }

    #[test]
    fn ingest_rejects_short_row_with_line_number() {
        match parse("1 1\n", 3, IndexBase::One) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error at line 1, got {other:?}"),
        }
    }

    #[test]
    fn ingest_shifts_zero_based_indices() {
        let t = parse("0 0 0 1.0\n", 3, IndexBase::Zero).unwrap();
        assert_eq!(t.dims(), &[1, 1, 1]);
        assert_eq!(t.index(0), &[0, 0, 0]);
    }

    #[test]
    fn ingest_detects_comma_and_tab() {
        let c = parse("1,2,3,0.5\n2,1,1,1.5\n", 3, IndexBase::One).unwrap();
        let t = parse("1\t2\t3\t0.5\n2\t1\t1\t1.5\n", 3, IndexBase::One).unwrap();
        assert_eq!(c, t);
        assert_eq!(c.dims(), &[2, 2, 3]);
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(
            parse("1 1 1 x\n", 3, IndexBase::One),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("# header\n1 1 1 1\n0 1 1 2\n", 3, IndexBase::One),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse("1 1 1 1\n1 1 1 2\n", 3, IndexBase::One),
            Err(Error::DuplicateEntry { line: 2, .. })
        ));
        // Comma file with a whitespace row.
        assert!(matches!(
            parse("1,1,1,1\n2 1 1 2\n", 3, IndexBase::One),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn new_rejects_duplicates_and_out_of_range() {
        assert!(matches!(
            SparseTensor::from_entries(vec![2, 2], 0, [(vec![0, 1], 1.0), (vec![0, 1], 2.0)]),
            Err(Error::DuplicateEntry { .. })
        ));
        assert!(matches!(
            SparseTensor::from_entries(vec![2, 2], 0, [(vec![2, 0], 1.0)]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(SparseTensor::from_entries(vec![2, 2], 2, [(vec![0, 0], 1.0)]).is_err());
    }

    #[test]
    fn z_normalize_two_points() {
        let (z, stats) = with_values(&[1.0, 3.0]).z_normalize().unwrap();
        assert_eq!(z.values(), &[-1.0, 1.0]);
        assert_eq!(
            stats,
            Normalization {
                mean: 2.0,
                std: 1.0
            }
        );
    }

    #[test]
    fn z_normalize_zero_variance() {
        assert!(matches!(
            with_values(&[5.0, 5.0]).z_normalize(),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn z_normalize_three_points() {
        let (z, stats) = with_values(&[0.0, 0.0, 6.0]).z_normalize().unwrap();
        assert!((stats.mean - 2.0).abs() < 1e-15);
        assert!((stats.std - 8f64.sqrt()).abs() < 1e-15);
        let expected = [-0.5f64.sqrt(), -0.5f64.sqrt(), 2f64.sqrt()];
        for (a, b) in z.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn split_sizes() {
        let t = with_values(&(0..100).map(f64::from).collect::<Vec<_>>());
        let s = t.split(7).unwrap();
        assert_eq!(
            (s.train.nnz(), s.validation.nnz(), s.test.nnz()),
            (80, 10, 10)
        );

        let t = with_values(&(0..101).map(f64::from).collect::<Vec<_>>());
        let s = t.split(7).unwrap();
        assert_eq!(
            (s.train.nnz(), s.validation.nnz(), s.test.nnz()),
            (81, 10, 10)
        );

        let again = t.split(7).unwrap();
        assert_eq!(s.train, again.train);
        assert_eq!(s.validation, again.validation);
        assert_eq!(s.test, again.test);

        let t = with_values(&(0..9).map(f64::from).collect::<Vec<_>>());
        assert!(matches!(
            t.split(0),
            Err(Error::InsufficientData { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn census_counts() {
        let t = SparseTensor::from_entries(
            vec![3, 2],
            0,
            [(vec![0, 0], 1.0), (vec![0, 1], 1.0), (vec![1, 0], 1.0)],
        )
        .unwrap();
        let c = t.slice_census();
        assert_eq!(c.counts, vec![2, 1, 0]);
        assert_eq!((c.min, c.max), (0, 2));

        let empty = SparseTensor::new(vec![2, 4], 0, vec![], vec![]).unwrap();
        assert_eq!(empty.slice_census().counts, vec![0, 0]);

        let t = SparseTensor::from_entries(
            vec![3, 2, 2],
            0,
            [
                (vec![0, 0, 0], 1.0),
                (vec![0, 1, 1], 2.0),
                (vec![0, 1, 0], 3.0),
            ],
        )
        .unwrap();
        assert_eq!(t.slice_census().counts, vec![3, 0, 0]);
    }

    #[test]
    fn census_csv() {
        let c = SliceCensus::from_counts(vec![2, 0]);
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "time_index,nonzero_count\n1,2\n2,0\n"
        );
    }

    fn arb_tensor() -> impl Strategy<Value = SparseTensor> {
        (1usize..4, 1usize..5, 1usize..6, any::<u64>()).prop_flat_map(|(a, b, c, _)| {
            let cells = a * b * c;
            proptest::collection::btree_map(0..cells, -1e3f64..1e3, 0..=cells).prop_map(move |m| {
                SparseTensor::from_entries(
                    vec![a, b, c],
                    1,
                    m.into_iter()
                        .map(|(cell, v)| (vec![cell / (b * c), (cell / c) % b, cell % c], v)),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn write_then_read_reproduces_entries(t in arb_tensor()) {
            prop_assume!(!t.is_empty());
            let mut buf = Vec::new();
            t.write_delimited(&mut buf, '\t').unwrap();
            let back = SparseTensor::read_delimited(buf.as_slice(), 3, 1, IndexBase::One).unwrap();
            let mut a: Vec<_> = t.iter().map(|(i, v)| (i.to_vec(), v.to_bits())).collect();
            let mut b: Vec<_> = back.iter().map(|(i, v)| (i.to_vec(), v.to_bits())).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn census_sums_to_nnz(t in arb_tensor()) {
            let c = t.slice_census();
            prop_assert_eq!(c.total(), t.nnz());
            prop_assert_eq!(c.len(), t.dims()[1]);
        }

        #[test]
        fn z_normalized_moments(values in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let t = with_values(&values);
            if let Ok((z, _)) = t.z_normalize() {
                let n = z.nnz() as f64;
                let mean = z.values().iter().sum::<f64>() / n;
                let var = z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn split_invariants_on_random_tensors() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..1000u64 {
            let n = rng.gen_range(10..300);
            let t = with_values(&(0..n).map(|i| i as f64).collect::<Vec<_>>());
            let s = t.split(case).unwrap();
            let exact = n as f64 / 10.0;
            assert!((s.validation.nnz() as f64 - exact).abs() <= 1.0);
            assert!((s.test.nnz() as f64 - exact).abs() <= 1.0);
            assert!((s.train.nnz() as f64 - 8.0 * exact).abs() <= 1.0);
            let mut all: Vec<usize> = [&s.train, &s.validation, &s.test]
                .iter()
                .flat_map(|p| p.iter().map(|(i, _)| i[0]).collect::<Vec<_>>())
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
