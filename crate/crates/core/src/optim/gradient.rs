//! Gradients of the training objective with respect to one factor matrix.

use rayon::prelude::*;

use super::index::ModeIndex;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::FactorModel;
use crate::smoothing::SmoothingSpec;
use crate::tensor::SparseTensor;

/// `∂L/∂A^(t)` for the full (unscaled) objective.
///
/// Row `t` collects the data term of its slice, its own smoothing residual,
/// and the pull from every row whose window contains `t`, since `a_t` enters
/// those rows' smoothed vectors.
pub fn time_gradient(
    model: &FactorModel,
    train: &SparseTensor,
    spec: &SmoothingSpec,
    lambda_t: f64,
) -> Result<Matrix> {
    model.check_compatible(train)?;
    let t = model.time_mode();
    if spec.time_len() != model.factor(t).rows() {
        return Err(Error::Shape(format!(
            "smoothing tables cover {} time indices, model has {}",
            spec.time_len(),
            model.factor(t).rows()
        )));
    }
    let index = ModeIndex::build(train, t);
    Ok(mode_gradient(
        model,
        train,
        t,
        &index,
        Some((spec, lambda_t)),
        0.0,
        1.0,
    ))
}

/// Gradient with respect to `A^(mode)`, multiplied by `scale`.
///
/// The time mode receives the smoothing term (when `smoothing` is given);
/// every other mode receives the ridge term `2 λ_r a`.
pub(crate) fn mode_gradient(
    model: &FactorModel,
    train: &SparseTensor,
    mode: usize,
    index: &ModeIndex,
    smoothing: Option<(&SmoothingSpec, f64)>,
    lambda_r: f64,
    scale: f64,
) -> Matrix {
    let rank = model.rank();
    let factor = model.factor(mode);
    let rows: Vec<Vec<f64>> = (0..index.rows())
        .into_par_iter()
        .map(|row| {
            let mut g = vec![0.0; rank];
            let mut p = vec![0.0; rank];
            let a = factor.row(row);
            for &e in index.row(row) {
                let idx = train.index(e);
                model.partial_product(idx, mode, &mut p);
                let estimate: f64 = p.iter().zip(a).map(|(p, a)| p * a).sum();
                let residual = train.value(e) - estimate;
                for (g, p) in g.iter_mut().zip(&p) {
                    *g -= 2.0 * residual * p;
                }
            }
            g
        })
        .collect();
    let mut grad = Matrix::from_vec(index.rows(), rank, rows.concat());

    if mode == model.time_mode() {
        if let Some((spec, lambda_t)) = smoothing.filter(|&(_, l)| l != 0.0) {
            let res = spec.residuals(factor);
            for row in 0..res.rows() {
                let own = 2.0 * lambda_t * spec.penalty(row);
                for (g, r) in grad.row_mut(row).iter_mut().zip(res.row(row)) {
                    *g += own * r;
                }
                for &(s, w) in spec.neighbors(row) {
                    let pull = own * w;
                    for (g, r) in grad.row_mut(s).iter_mut().zip(res.row(row)) {
                        *g -= pull * r;
                    }
                }
            }
        }
    } else if lambda_r != 0.0 {
        for (g, a) in grad.as_mut_slice().iter_mut().zip(factor.as_slice()) {
            *g += 2.0 * lambda_r * a;
        }
    }

    if scale != 1.0 {
        grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
    }
    grad
}
