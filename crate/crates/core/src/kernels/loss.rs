use crate::error::{invalid_arg, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(invalid_arg!("label {label} out of range for {} classes", z.len()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_total - (z[label] - max);
    let mut grad = softmax(z);
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
