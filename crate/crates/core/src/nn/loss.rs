use serde::{Deserialize, Serialize};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Mean squared error over every element of a `rows x width` prediction.
/// Returns the loss and its gradient with respect to the prediction.
pub fn mse<T: Real>(pred: &[T], target: &[f32]) -> (f64, Vec<T>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut total = 0.0f64;
    let scale = T::of(2.0 / n);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - T::of_f32(t);
            total += d.f64() * d.f64();
            scale * d
        })
        .collect();
    (total / n, grad)
}

/// Numerically stable softmax of one logit row, in `f64`.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let e: Vec<f64> = logits.iter().map(|v| (v.f64() - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Batch-mean cross-entropy of `rows x classes` logits against labels,
/// using log-sum-exp. Returns the loss and the logit gradient.
pub fn cross_entropy<T: Real>(logits: &[T], labels: &[usize], classes: usize) -> (f64, Vec<T>) {
    let rows = labels.len();
    assert_eq!(logits.len(), rows * classes);
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(logits.len());
    for (r, &y) in labels.iter().enumerate() {
        assert!(y < classes, "label {y} out of range");
        let row = &logits[r * classes..(r + 1) * classes];
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let lse = m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
        total += lse - row[y].f64();
        for (k, v) in row.iter().enumerate() {
            let p = (v.f64() - lse).exp();
            let onehot = if k == y { 1.0 } else { 0.0 };
            grad.push(T::of((p - onehot) / rows as f64));
        }
    }
    (total / rows as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_at_target() {
        let (l, g) = mse(&[0.5f32, -1.0, 2.0], &[0.5, -1.0, 2.0]);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ce_of_uniform_logits_is_ln_classes() {
        let (l, _) = cross_entropy(&[0.0f32, 0.0], &[0], 2);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l8, _) = cross_entropy(&[3.0f64; 8], &[5], 8);
        assert!((l8 - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_is_stable_and_non_negative() {
        let (l, g) = cross_entropy(&[1000.0f32, -1000.0, 0.0], &[0], 3);
        assert!(l.is_finite() && l >= 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
        let (l2, _) = cross_entropy(&[1000.0f32, -1000.0, 0.0], &[1], 3);
        assert!((l2 - 2000.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.3f32, -2.0, 5.0, 1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
