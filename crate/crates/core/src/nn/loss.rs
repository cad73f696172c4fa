//! Token-level cross-entropy over a batch of positions, with the gradient
//! of the mean loss with respect to the logits.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Mean of -log softmax(logits_t)[target_t] over positions, plus the logit
/// gradient (softmax - one_hot) / T. Softmax uses max subtraction, and the
/// log-probability is computed as (logit - max) - log(sum exp) rather than
/// log of the normalized probability, so saturated rows lose no precision.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, targets: &[usize]) -> Result<(T, Matrix<T>)> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "cross_entropy: {} logit rows vs {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Shape("cross_entropy: empty batch".into()));
    }
    let vocab = logits.cols();
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::Data(format!("cross_entropy: target {bad} outside vocab {vocab}")));
    }
    let t_count = logits.rows();
    let inv_t = T::from_f64(1.0 / t_count as f64);
    let mut grad = Matrix::zeros(t_count, vocab);
    let mut loss = T::zero();
    for t in 0..t_count {
        let row = logits.row(t);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        let grad_row = grad.row_mut(t);
        for (g, &z) in grad_row.iter_mut().zip(row.iter()) {
            *g = (z - max).exp();
            sum += *g;
        }
        loss += sum.ln() - (row[targets[t]] - max);
        for g in grad_row.iter_mut() {
            *g = *g / sum * inv_t;
        }
        grad_row[targets[t]] -= inv_t;
    }
    Ok((loss * inv_t, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_cost_log_vocab() {
        let logits = Matrix::from_vec(2, 5, vec![0.7f64; 10]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0, 4]).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn saturated_target_logit_drives_loss_to_zero() {
        let mut data = vec![0.0f64; 4];
        data[2] = 50.0;
        let logits = Matrix::from_vec(1, 4, data).unwrap();
        let (loss, _) = cross_entropy(&logits, &[2]).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-20, "loss {loss}");
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits =
            Matrix::from_vec(3, 6, (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>())
                .unwrap();
        let (_, grad) = cross_entropy(&logits, &[1, 0, 5]).unwrap();
        for t in 0..3 {
            let s: f64 = grad.row(t).iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let logits =
            Matrix::from_vec(3, 5, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>())
                .unwrap();
        let targets = [4usize, 0, 2];
        let (_, grad) = cross_entropy(&logits, &targets).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            let lp = cross_entropy(&plus, &targets).unwrap().0;
            let lm = cross_entropy(&minus, &targets).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let a = grad.data()[i];
            assert!(
                (a - fd).abs() <= 1e-6 * fd.abs().max(a.abs()).max(1e-6),
                "coord {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn out_of_range_target_is_a_data_error() {
        let logits = Matrix::from_vec(1, 4, vec![0.0f64; 4]).unwrap();
        assert!(cross_entropy(&logits, &[4]).is_err());
    }
}
