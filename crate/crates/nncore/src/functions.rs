//! Plain (off-tape) numeric helpers shared by the tape ops and by
//! evaluation-only code paths.

use crate::{NnError, Result};

/// Logistic function, evaluated so that neither tail overflows.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| logistic(v)).collect()
}

/// `ln Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `softmax(logits / temperature)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(NnError::Usage(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(NnError::Numeric(format!("non-finite logits {logits:?}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0, 2.0, 2.0], 0.3).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p[1] - 0.2689).abs() < 1e-4);
        let p = softmax(&[1.0, 0.0], 0.1).unwrap();
        assert!(p[0] >= 0.9999);
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(softmax(&[f64::NAN, 0.0], 1.0), Err(NnError::Numeric(_))));
        assert!(softmax(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(logistic(0.0), 0.5);
        assert_eq!(logistic(800.0), 1.0);
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(40.0) < 1.0 + 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 1..8),
            shift in -100.0f64..100.0,
            temp in 0.05f64..5.0,
        ) {
            let p = softmax(&logits, temp).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted, temp).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_symmetry(x in -50.0f64..50.0) {
            prop_assert!((logistic(x) + logistic(-x) - 1.0).abs() < 1e-12);
        }
    }
}
