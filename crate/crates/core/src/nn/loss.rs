use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mean squared error and its gradient `2(pred − target)/numel`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.check_same_shape(target, "mse_loss")?;
    let n = pred.numel().max(1) as f64;
    let mut sum = 0.0f64;
    let scale = T::from_f64(2.0 / n);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.to_f64() * d.to_f64();
            d * scale
        })
        .collect();
    let loss = sum / n;
    if !loss.is_finite() {
        return Err(Error::Diverged("mse loss".into()));
    }
    Ok((loss, Tensor::from_vec(pred.shape(), grad)?))
}

/// Mean negative log-softmax of the true class over a `(b, classes)` batch.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, classes) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::LengthMismatch(b, labels.len()));
    }
    let mut grad = vec![T::ZERO; b * classes];
    let mut total = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits.data()[r * classes..(r + 1) * classes];
        let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - row[label].to_f64();
        for (c, e) in exps.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad[r * classes + c] = T::from_f64((e / z - onehot) / b as f64);
        }
    }
    let loss = total / b as f64;
    if !loss.is_finite() {
        return Err(Error::Diverged("cross-entropy loss".into()));
    }
    Ok((loss, Tensor::from_vec(&[b, classes], grad)?))
}
