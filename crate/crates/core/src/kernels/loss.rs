use crate::tensor::{Result, Tensor, TensorError};

/// Numerically stable softmax (max-subtracted, accumulated in f64).
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - one_hot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    const OP: &str = "softmax_cross_entropy";
    logits.expect_rank(OP, 1)?;
    let k = logits.len();
    if label >= k {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: format!("label {label} out of range for {k} classes"),
        });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let log_sum = z.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    let loss = log_sum - (z[label] as f64 - max);
    let mut grad: Vec<f32> = softmax(z).into_iter().map(|p| p as f32).collect();
    grad[label] -= 1.0;
    Ok((loss as f32, Tensor::new(&[k], grad)?))
}
