//! Closed-form least-squares update of one non-time factor matrix, row by row.
//!
//! With every other factor fixed, row `i` of `A^(n)` minimizes
//! `Σ_{α∈Ω_i} (x_α - <a_i, p_α>)² + λ_r ||a_i||²`, where `p_α[k]` is the
//! product of the other modes' factor entries for component `k`. The
//! minimizer solves `(B_i + λ_r I) a_iᵀ = c_iᵀ` with `B_i = Σ p_α p_αᵀ` and
//! `c_i = Σ x_α p_α`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::index::ModeIndex;
use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::tensor::SparseTensor;

/// Replaces every row of `A^(mode)` by its exact ridge least-squares solution.
///
/// Rows without observed entries become zero. `mode` must not be the time
/// mode, whose objective also carries the smoothing term.
pub fn rowwise_update(
    model: &mut FactorModel,
    train: &SparseTensor,
    mode: usize,
    lambda_r: f64,
) -> Result<()> {
    model.check_compatible(train)?;
    let index = ModeIndex::build(train, mode);
    rowwise_update_indexed(model, train, mode, lambda_r, &index)
}

pub(crate) fn rowwise_update_indexed(
    model: &mut FactorModel,
    train: &SparseTensor,
    mode: usize,
    lambda_r: f64,
    index: &ModeIndex,
) -> Result<()> {
    if mode >= model.order() {
        return Err(Error::Shape(format!("mode {mode} out of range")));
    }
    if mode == model.time_mode() {
        return Err(Error::Config(
            "the time factor has no closed-form row update".into(),
        ));
    }
    if !(lambda_r >= 0.0) {
        return Err(Error::Config(format!(
            "lambda_r must be non-negative, got {lambda_r}"
        )));
    }
    let rank = model.rank();
    let solved: Vec<Vec<f64>> = {
        let model = &*model;
        (0..index.rows())
            .into_par_iter()
            .map(|row| solve_row(model, train, mode, row, lambda_r, index.row(row)))
            .collect::<Result<_>>()?
    };
    let factor = model.factor_mut(mode);
    for (row, values) in solved.iter().enumerate() {
        factor.row_mut(row).copy_from_slice(values);
    }
    debug_assert_eq!(factor.cols(), rank);
    Ok(())
}

fn solve_row(
    model: &FactorModel,
    train: &SparseTensor,
    mode: usize,
    row: usize,
    lambda_r: f64,
    entries: &[usize],
) -> Result<Vec<f64>> {
    let rank = model.rank();
    if entries.is_empty() {
        return Ok(vec![0.0; rank]);
    }
    let mut gram = DMatrix::<f64>::zeros(rank, rank);
    let mut rhs = DVector::<f64>::zeros(rank);
    let mut p = vec![0.0; rank];
    for &e in entries {
        model.partial_product(train.index(e), mode, &mut p);
        let x = train.value(e);
        for k1 in 0..rank {
            rhs[k1] += x * p[k1];
            for k2 in 0..=k1 {
                gram[(k1, k2)] += p[k1] * p[k2];
            }
        }
    }
    for k1 in 0..rank {
        gram[(k1, k1)] += lambda_r;
        for k2 in 0..k1 {
            gram[(k2, k1)] = gram[(k1, k2)];
        }
    }
    let chol = gram.cholesky().ok_or(Error::Singular { mode, row })?;
    let solution = chol.solve(&rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { mode, row });
    }
    Ok(solution.iter().copied().collect())
}
