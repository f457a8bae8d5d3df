//! Softmax cross-entropy with optional L2 weight penalty.

use crate::error::{Error, Result};
use crate::nn::layers::softmax;
use crate::nn::tensor::Tensor;

/// Mean cross-entropy over the batch plus λ·½Σ‖W‖² over the given weight
/// matrices (biases and batch-norm parameters are not penalized). Returns
/// the loss and dLoss/dLogits = (softmax(f) − onehot(y)) / B. The λ·W
/// gradient term is added to dW at the optimizer boundary, not here.
pub fn cross_entropy_loss(
    logits: &Tensor,
    labels: &[usize],
    weight_decay: f64,
    penalized_weights: &[&Tensor],
) -> Result<(f64, Tensor)> {
    let (batch, classes) = match logits.shape.as_slice() {
        &[b, k] => (b, k),
        other => {
            return Err(Error::Shape(format!(
                "cross_entropy_loss: expected rank-2 logits, got {other:?}"
            )))
        }
    };
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "cross_entropy_loss: {batch} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut d_logits = probs.clone();
    for (n, &y) in labels.iter().enumerate() {
        // L_i = -f_y + log Σ exp(f_j), computed stably as -log(softmax_y)
        loss += -probs.data[n * classes + y].max(f64::MIN_POSITIVE).ln();
        d_logits.data[n * classes + y] -= 1.0;
    }
    loss /= batch as f64;
    for g in &mut d_logits.data {
        *g /= batch as f64;
    }
    if weight_decay != 0.0 {
        let sq: f64 = penalized_weights
            .iter()
            .map(|w| w.data.iter().map(|v| v * v).sum::<f64>())
            .sum();
        loss += weight_decay * 0.5 * sq;
    }
    Ok((loss, d_logits))
}
