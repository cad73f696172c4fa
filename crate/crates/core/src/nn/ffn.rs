//! Gated feed-forward block: y = (silu(x W_gate) ⊙ (x W_up)) W_down.
//! Weights are stored input-by-output, so activations multiply on the right.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub fn silu<T: Scalar>(z: T) -> T {
    z / (T::one() + (-z).exp())
}

/// Derivative of silu: sigmoid(z) * (1 + z * (1 - sigmoid(z))).
fn silu_prime<T: Scalar>(z: T) -> T {
    let sig = T::one() / (T::one() + (-z).exp());
    sig * (T::one() + z * (T::one() - sig))
}

fn validate<T: Scalar>(
    x: &Matrix<T>,
    w_gate: &Matrix<T>,
    w_up: &Matrix<T>,
    w_down: &Matrix<T>,
) -> Result<()> {
    let d = x.cols();
    let f = w_gate.cols();
    if w_gate.rows() != d || w_up.rows() != d || w_up.cols() != f {
        return Err(Error::Shape("ffn: gate/up projections disagree with input width".into()));
    }
    if w_down.rows() != f || w_down.cols() != d {
        return Err(Error::Shape("ffn: down projection disagrees with hidden width".into()));
    }
    Ok(())
}

/// Batched forward over rows of `x` (each row one position).
pub fn swiglu_forward<T: Scalar>(
    x: &Matrix<T>,
    w_gate: &Matrix<T>,
    w_up: &Matrix<T>,
    w_down: &Matrix<T>,
) -> Result<Matrix<T>> {
    validate(x, w_gate, w_up, w_down)?;
    let mut hidden = x.matmul(w_gate)?;
    let up = x.matmul(w_up)?;
    for (h, &u) in hidden.data_mut().iter_mut().zip(up.data().iter()) {
        *h = silu(*h) * u;
    }
    hidden.matmul(w_down)
}

/// Single-vector convenience wrapper around [`swiglu_forward`].
pub fn swiglu_ffn<T: Scalar>(
    x: &[T],
    w_gate: &Matrix<T>,
    w_up: &Matrix<T>,
    w_down: &Matrix<T>,
) -> Result<Vec<T>> {
    let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(swiglu_forward(&row, w_gate, w_up, w_down)?.data().to_vec())
}

/// Gradients for input and all three projections. Hidden activations are
/// recomputed from `x` rather than carried on a tape.
pub fn swiglu_backward<T: Scalar>(
    x: &Matrix<T>,
    w_gate: &Matrix<T>,
    w_up: &Matrix<T>,
    w_down: &Matrix<T>,
    d_out: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    validate(x, w_gate, w_up, w_down)?;
    if d_out.rows() != x.rows() || d_out.cols() != w_down.cols() {
        return Err(Error::Shape("ffn backward: gradient shape mismatch".into()));
    }
    let gate_pre = x.matmul(w_gate)?;
    let up = x.matmul(w_up)?;
    let mut hidden = gate_pre.clone();
    for (h, &u) in hidden.data_mut().iter_mut().zip(up.data().iter()) {
        *h = silu(*h) * u;
    }
    let d_w_down = hidden.matmul_transpose_a(d_out)?;
    let d_hidden = d_out.matmul_transpose_b(w_down)?;
    let mut d_gate_pre = d_hidden.clone();
    let mut d_up = d_hidden;
    for i in 0..d_gate_pre.len() {
        let g = gate_pre.data()[i];
        d_gate_pre.data_mut()[i] *= up.data()[i] * silu_prime(g);
        d_up.data_mut()[i] *= silu(g);
    }
    let d_w_gate = x.matmul_transpose_a(&d_gate_pre)?;
    let d_w_up = x.matmul_transpose_a(&d_up)?;
    let mut d_x = d_gate_pre.matmul_transpose_b(w_gate)?;
    d_x.add_assign(&d_up.matmul_transpose_b(w_up)?)?;
    Ok((d_x, d_w_gate, d_w_up, d_w_down))
}
