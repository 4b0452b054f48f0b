//! Mean-squared-error loss.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;

/// MSE over a batch and its gradient w.r.t. the predictions:
/// `2 (pred - label) / n`.
pub fn mse_loss<S: Scalar>(pred: &[S], label: &[S]) -> Result<(f64, Vec<S>)> {
    if pred.is_empty() {
        return Err(Error::config("mse_loss on an empty batch"));
    }
    if pred.len() != label.len() {
        return Err(Error::dimension("prediction/label length mismatch"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &l) in pred.iter().zip(label) {
        let e = p.as_f64() - l.as_f64();
        loss += e * e;
        grad.push(S::from_f64(2.0 * e / n));
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_zero_loss() {
        let (loss, grad) = mse_loss(&[1.0f64, -2.0, 3.0], &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn arithmetic_example() {
        // errors [1, 2] -> (1 + 4) / 2 = 2.5
        let (loss, grad) = mse_loss(&[1.0f64, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad, vec![1.0, 2.0]); // 2 e / n
    }

    #[test]
    fn scaling_errors_scales_loss_quadratically() {
        let pred = [0.5f64, -1.5, 2.0];
        let zero = [0.0f64; 3];
        let (l1, _) = mse_loss(&pred, &zero).unwrap();
        let scaled: Vec<f64> = pred.iter().map(|p| 3.0 * p).collect();
        let (l3, _) = mse_loss(&scaled, &zero).unwrap();
        assert!((l3 - 9.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(mse_loss::<f64>(&[], &[]).is_err());
    }
}
