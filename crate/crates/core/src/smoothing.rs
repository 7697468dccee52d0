//! Gaussian-kernel smoothing of the time factor and per-slice sparsity
//! penalties.
//!
//! Every time row `a_t` is pulled toward a smoothed row `ã_t`, the
//! kernel-weighted average of the other rows in a window of `S` consecutive
//! time indices centred on `t`. The center row is not part of its own
//! neighborhood. Windows that hit the ends of the time axis are truncated and
//! their weights renormalized over the remaining neighbors.
//!
//! Slices with few observed entries get a larger penalty weight `β_t`, so
//! their rows lean more on their neighbors.

use std::io::Write;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensor::SliceCensus;

/// Lower end of the min-max normalized slice density.
pub const DENSITY_FLOOR: f64 = 0.001;
/// Upper end of the min-max normalized slice density.
pub const DENSITY_CEIL: f64 = 0.999;

/// Neighbors of every time index within a window of `window` indices.
///
/// Neighbor `s` of `t` satisfies `0 < |s - t| <= window / 2`; neighbors are
/// listed in increasing index order.
pub fn build_neighbors(time_len: usize, window: usize) -> Result<Vec<Vec<usize>>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidWindow(window));
    }
    if time_len < 2 {
        return Err(Error::EmptyNeighborhood(0));
    }
    let half = window / 2;
    Ok((0..time_len)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(time_len - 1);
            (lo..=hi).filter(|&s| s != t).collect()
        })
        .collect())
}

/// Normalized Gaussian kernel weights of `neighbors` around `center`.
pub fn kernel_weights(center: usize, neighbors: &[usize], bandwidth: f64) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood(center));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Config(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    let two_var = 2.0 * bandwidth * bandwidth;
    let sq = |s: usize| {
        let d = s.abs_diff(center) as f64;
        d * d
    };
    // Shift exponents by the nearest distance so the largest kernel value is 1.
    let nearest = neighbors
        .iter()
        .map(|&s| sq(s))
        .fold(f64::INFINITY, f64::min);
    let kernel: Vec<f64> = neighbors
        .iter()
        .map(|&s| (-(sq(s) - nearest) / two_var).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    Ok(kernel.into_iter().map(|k| k / total).collect())
}

/// Time sparsity `β_t = 1 - d_t`, where `d_t` min-max normalizes the slice
/// count into `[0.001, 0.999]`.
///
/// A census with identical counts everywhere gives `d_t = 0.999` (the
/// weakest penalty) for every slice.
pub fn sparsity_penalties(census: &SliceCensus) -> Vec<f64> {
    let (lo, hi) = (census.min, census.max);
    census
        .counts
        .iter()
        .map(|&count| {
            // Endpoints map to the exact literals.
            if hi == lo || count == hi {
                DENSITY_FLOOR
            } else if count == lo {
                DENSITY_CEIL
            } else {
                let density = (DENSITY_CEIL - DENSITY_FLOOR) * (count - lo) as f64
                    / (hi - lo) as f64
                    + DENSITY_FLOOR;
                1.0 - density
            }
        })
        .collect()
}

/// Precomputed smoothing tables for one time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpec {
    window: usize,
    bandwidth: f64,
    /// `(neighbor, weight)` pairs per time index.
    neighbors: Vec<Vec<(usize, f64)>>,
    penalties: Vec<f64>,
}

impl SmoothingSpec {
    /// Tables for the census's time axis with sparsity penalties derived from
    /// its counts.
    pub fn new(census: &SliceCensus, window: usize, bandwidth: f64) -> Result<Self> {
        Self::with_penalties(window, bandwidth, sparsity_penalties(census))
    }

    /// Tables with caller-supplied penalties, one per time index.
    pub fn with_penalties(window: usize, bandwidth: f64, penalties: Vec<f64>) -> Result<Self> {
        let neighborhoods = build_neighbors(penalties.len(), window)?;
        let neighbors = neighborhoods
            .iter()
            .enumerate()
            .map(|(t, nb)| {
                let w = kernel_weights(t, nb, bandwidth)?;
                Ok(nb.iter().copied().zip(w).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SmoothingSpec {
            window,
            bandwidth,
            neighbors,
            penalties,
        })
    }

    /// Every slice penalized with `β = 1`, i.e. plain smoothing without the
    /// sparsity adjustment.
    pub fn uniform(time_len: usize, window: usize, bandwidth: f64) -> Result<Self> {
        Self::with_penalties(window, bandwidth, vec![1.0; time_len])
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn time_len(&self) -> usize {
        self.penalties.len()
    }

    pub fn neighbors(&self, t: usize) -> &[(usize, f64)] {
        &self.neighbors[t]
    }

    pub fn penalties(&self) -> &[f64] {
        &self.penalties
    }

    pub fn penalty(&self, t: usize) -> f64 {
        self.penalties[t]
    }

    /// `ã_t`, the kernel-weighted combination of neighbor rows.
    pub fn smoothed_row(&self, time_factor: &Matrix, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; time_factor.cols()];
        self.smoothed_row_into(time_factor, t, &mut out);
        out
    }

    pub fn smoothed_row_into(&self, time_factor: &Matrix, t: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(s, w) in &self.neighbors[t] {
            for (o, a) in out.iter_mut().zip(time_factor.row(s)) {
                *o += w * a;
            }
        }
    }

    /// Residuals `a_t - ã_t` for every time row.
    pub fn residuals(&self, time_factor: &Matrix) -> Matrix {
        let mut res = Matrix::zeros(time_factor.rows(), time_factor.cols());
        let mut smooth = vec![0.0; time_factor.cols()];
        for t in 0..time_factor.rows() {
            self.smoothed_row_into(time_factor, t, &mut smooth);
            for ((r, a), s) in res
                .row_mut(t)
                .iter_mut()
                .zip(time_factor.row(t))
                .zip(&smooth)
            {
                *r = a - s;
            }
        }
        res
    }

    /// CSV `time_index,neighbor_index,weight` with one-based indices.
    pub fn write_weights_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_index,neighbor_index,weight")?;
        for (t, nb) in self.neighbors.iter().enumerate() {
            for &(s, weight) in nb {
                writeln!(w, "{},{},{weight}", t + 1, s + 1)?;
            }
        }
        Ok(())
    }

    /// CSV `time_index,beta` with one-based indices.
    pub fn write_penalties_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_index,beta")?;
        for (t, beta) in self.penalties.iter().enumerate() {
            writeln!(w, "{},{beta}", t + 1)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interior_and_boundary_windows() {
        let nb = build_neighbors(5, 3).unwrap();
        assert_eq!(nb[2], vec![1, 3]);
        assert_eq!(nb[0], vec![1]);
        let nb = build_neighbors(5, 5).unwrap();
        assert_eq!(nb[1], vec![0, 2, 3]);
    }

    #[test]
    fn invalid_windows() {
        for w in [0, 1, 2, 4, 10] {
            assert!(matches!(
                build_neighbors(5, w),
                Err(Error::InvalidWindow(_))
            ));
        }
        assert!(build_neighbors(1, 3).is_err());
    }

    #[test]
    fn symmetric_pair_gets_half() {
        for sigma in [0.1, 0.5, 3.0] {
            let w = kernel_weights(4, &[3, 5], sigma).unwrap();
            assert_eq!(w, vec![0.5, 0.5]);
        }
        assert_eq!(kernel_weights(0, &[1], 0.5).unwrap(), vec![1.0]);
        assert!(matches!(
            kernel_weights(0, &[], 0.5),
            Err(Error::EmptyNeighborhood(0))
        ));
    }

    #[test]
    fn two_sided_window_weights() {
        // exp(-d^2 / 0.5) for d = 1, 2, normalized over two of each.
        let (k1, k2) = ((-2.0f64).exp(), (-8.0f64).exp());
        let z = 2.0 * (k1 + k2);
        let w = kernel_weights(5, &[3, 4, 6, 7], 0.5).unwrap();
        assert!((w[1] - k1 / z).abs() < 1e-15);
        assert!((w[0] - k2 / z).abs() < 1e-15);
        assert!((w[1] - 0.498764).abs() < 1e-6);
        assert!((w[0] - 0.001236).abs() < 1e-6);
        assert_eq!(w[0], w[3]);
        assert_eq!(w[1], w[2]);
    }

    #[test]
    fn penalty_endpoints_and_midpoint() {
        let census = SliceCensus::from_counts(vec![10, 110, 60]);
        let beta = sparsity_penalties(&census);
        assert_eq!(beta[0], 0.999);
        assert_eq!(beta[1], 0.001);
        assert!((beta[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_census_gets_weakest_penalty() {
        let beta = sparsity_penalties(&SliceCensus::from_counts(vec![4, 4, 4]));
        assert_eq!(beta, vec![0.001; 3]);
    }

    #[test]
    fn smoothed_row_examples() {
        let spec = SmoothingSpec::uniform(5, 3, 0.5).unwrap();
        let mut a = Matrix::zeros(5, 2);
        a.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        a.row_mut(3).copy_from_slice(&[3.0, 2.0]);
        assert_eq!(spec.smoothed_row(&a, 2), vec![2.0, 1.0]);
        // Single neighbor at the boundary.
        assert_eq!(spec.smoothed_row(&a, 0), a.row(1).to_vec());

        let constant = Matrix::from_fn(5, 2, |_, c| c as f64 + 0.25);
        for t in 0..5 {
            assert_eq!(spec.smoothed_row(&constant, t), constant.row(t).to_vec());
        }
    }

    #[test]
    fn csv_exports() {
        let spec = SmoothingSpec::new(&SliceCensus::from_counts(vec![1, 3]), 3, 0.5).unwrap();
        let mut w = Vec::new();
        spec.write_weights_csv(&mut w).unwrap();
        assert_eq!(
            String::from_utf8(w).unwrap(),
            "time_index,neighbor_index,weight\n1,2,1\n2,1,1\n"
        );
        let mut b = Vec::new();
        spec.write_penalties_csv(&mut b).unwrap();
        assert_eq!(
            String::from_utf8(b).unwrap(),
            "time_index,beta\n1,0.999\n2,0.001\n"
        );
    }

    proptest! {
        #[test]
        fn weights_normalized_and_monotone(
            len in 2usize..40,
            half in 1usize..6,
            sigma in 0.2f64..10.0,
        ) {
            let spec = SmoothingSpec::uniform(len, 2 * half + 1, sigma).unwrap();
            for t in 0..len {
                let nb = spec.neighbors(t);
                prop_assert!(!nb.is_empty());
                let total: f64 = nb.iter().map(|&(_, w)| w).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                for &(s, w) in nb {
                    prop_assert!(w > 0.0);
                    for &(s2, w2) in nb {
                        if s.abs_diff(t) < s2.abs_diff(t) {
                            prop_assert!(w >= w2);
                        }
                    }
                }
            }
        }

        #[test]
        fn wider_bandwidth_flattens_weights(
            sigma in 0.2f64..5.0,
            factor in 1.01f64..4.0,
        ) {
            let nb = [1, 2, 4, 5];
            let narrow = kernel_weights(3, &nb, sigma).unwrap();
            let wide = kernel_weights(3, &nb, sigma * factor).unwrap();
            prop_assert!(wide[1] / wide[0] < narrow[1] / narrow[0]);
        }

        #[test]
        fn beta_antitone_and_in_range(counts in proptest::collection::vec(0usize..500, 1..60)) {
            let census = SliceCensus::from_counts(counts.clone());
            let beta = sparsity_penalties(&census);
            for i in 0..counts.len() {
                prop_assert!((DENSITY_FLOOR..=DENSITY_CEIL).contains(&beta[i]));
                if counts[i] == census.min && census.min != census.max {
                    prop_assert_eq!(beta[i], 0.999);
                }
                if counts[i] == census.max {
                    prop_assert_eq!(beta[i], 0.001);
                }
                for j in 0..counts.len() {
                    if counts[i] <= counts[j] {
                        prop_assert!(beta[i] >= beta[j]);
                    }
                }
            }
        }

        #[test]
        fn smoothed_row_in_convex_hull(
            values in proptest::collection::vec(-10.0f64..10.0, 24),
            half in 1usize..4,
            sigma in 0.3f64..3.0,
        ) {
            let a = Matrix::from_vec(8, 3, values);
            let spec = SmoothingSpec::uniform(8, 2 * half + 1, sigma).unwrap();
            for t in 0..8 {
                let smooth = spec.smoothed_row(&a, t);
                for (k, v) in smooth.iter().enumerate() {
                    let col = spec.neighbors(t).iter().map(|&(s, _)| a[(s, k)]);
                    let lo = col.clone().fold(f64::INFINITY, f64::min);
                    let hi = col.fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
    }
}
