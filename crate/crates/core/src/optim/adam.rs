//! First-order update rules for a single factor matrix.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Moment accumulators of the Adam update for one factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Matrix,
    pub second: Matrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            first: Matrix::zeros(rows, cols),
            second: Matrix::zeros(rows, cols),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_matrix(m: &Matrix) -> Self {
        Self::new(m.rows(), m.cols())
    }
}

fn check_step(param: &Matrix, grad: &Matrix) -> Result<()> {
    if param.rows() != grad.rows() || param.cols() != grad.cols() {
        return Err(Error::Shape(format!(
            "gradient is {}x{}, parameter is {}x{}",
            grad.rows(),
            grad.cols(),
            param.rows(),
            param.cols()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    Ok(())
}

/// Bias-corrected Adam step, in place.
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    check_step(param, grad)?;
    if state.first.rows() != param.rows() || state.first.cols() != param.cols() {
        return Err(Error::Shape(
            "Adam state does not match parameter shape".into(),
        ));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let correct1 = 1.0 - b1.powf(state.step as f64);
    let correct2 = 1.0 - b2.powf(state.step as f64);
    let params = param.as_mut_slice().iter_mut();
    let moments = state
        .first
        .as_mut_slice()
        .iter_mut()
        .zip(state.second.as_mut_slice().iter_mut());
    for ((p, g), (m, v)) in params.zip(grad.as_slice()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correct1;
        let v_hat = *v / correct2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Plain gradient step, in place.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, learning_rate: f64) -> Result<()> {
    check_step(param, grad)?;
    for (p, g) in param.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *p -= learning_rate * g;
    }
    Ok(())
}
