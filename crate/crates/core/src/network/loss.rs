use alloc::vec;

use crate::error::{shape_err, usage_err, Result};
use crate::tensor::Tensor;

/// Cost of one batch: mean cross-entropy plus the L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// `−(1/B) Σ_m t_mᵀ log y_m`.
    pub cross_entropy: f64,
    /// `(α/2) Σ_i |w^(i)|²`.
    pub l2_term: f64,
    pub samples: usize,
}

impl LossValue {
    /// The batch-summed cross-entropy `−Σ_m t_mᵀ log y_m`.
    pub fn cross_entropy_sum(&self) -> f64 {
        self.cross_entropy * self.samples as f64
    }
}

/// Probabilities are clamped here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of softmax outputs `predictions: [C, B]` against
/// `targets: [C, B]` (each column a probability vector, usually one-hot),
/// plus `(α/2)·weight_norm_sq`.
pub fn cross_entropy(predictions: &Tensor, targets: &Tensor, alpha: f64, weight_norm_sq: f64) -> Result<LossValue> {
    if predictions.shape() != targets.shape() || predictions.rank() != 2 {
        return Err(shape_err!(
            "predictions {:?} and targets {:?} must be matching [C, B] tensors",
            predictions.shape(),
            targets.shape()
        ));
    }
    let (c, b) = (predictions.shape()[0], predictions.shape()[1]);
    if b == 0 {
        return Err(usage_err!("empty batch"));
    }
    let t = targets.data();
    for col in 0..b {
        let mut sum = 0.0;
        for r in 0..c {
            let v = t[r * b + col];
            if v < 0.0 {
                return Err(usage_err!("target column {} has a negative entry", col));
            }
            sum += v;
        }
        if libm::fabs(sum - 1.0) > 1e-12 {
            return Err(usage_err!("target column {} sums to {}, not 1", col, sum));
        }
    }
    let mut ce = 0.0;
    for (&y, &tv) in predictions.data().iter().zip(t) {
        if tv != 0.0 {
            ce -= tv * libm::log(y.max(PROB_FLOOR));
        }
    }
    let cross_entropy = ce / b as f64;
    let l2_term = 0.5 * alpha * weight_norm_sq;
    Ok(LossValue { total: cross_entropy + l2_term, cross_entropy, l2_term, samples: b })
}

/// One-hot `[classes, B]` targets for integer labels.
pub fn one_hot(labels: &[u8], classes: usize) -> Result<Tensor> {
    let b = labels.len();
    let mut data = vec![0.0; classes * b];
    for (col, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(usage_err!("label {} out of range for {} classes", l, classes));
        }
        data[l * b + col] = 1.0;
    }
    Tensor::new(vec![classes, b], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn perfect_prediction_is_free() {
        let t = one_hot(&[3, 0], 4).unwrap();
        let l = cross_entropy(&t, &t, 0.0, 123.0).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn uniform_prediction() {
        let y = Tensor::new(vec![10, 1], vec![0.1; 10]).unwrap();
        let l = cross_entropy(&y, &one_hot(&[7], 10).unwrap(), 0.0, 0.0).unwrap();
        assert!((l.total - core::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn l2_term_of_single_weight() {
        let t = one_hot(&[0], 2).unwrap();
        let l = cross_entropy(&t, &t, 1.0, 4.0).unwrap();
        assert_eq!(l.l2_term, 2.0);
        assert_eq!(l.total, l.cross_entropy + l.l2_term);
    }

    #[test]
    fn mean_and_sum() {
        let y = Tensor::new(vec![2, 2], vec![0.5, 0.25, 0.5, 0.75]).unwrap();
        let l = cross_entropy(&y, &one_hot(&[0, 1], 2).unwrap(), 0.0, 0.0).unwrap();
        let sum = -(0.5f64.ln() + 0.75f64.ln());
        assert!((l.cross_entropy_sum() - sum).abs() < 1e-14);
        assert!((l.cross_entropy - sum / 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_targets() {
        let y = Tensor::new(vec![2, 1], vec![0.5, 0.5]).unwrap();
        let t = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert!(matches!(cross_entropy(&y, &t, 0.0, 0.0), Err(Error::Usage(_))));
        assert!(matches!(one_hot(&[10], 10), Err(Error::Usage(_))));
    }
}
