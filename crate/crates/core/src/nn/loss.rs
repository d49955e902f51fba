use alloc::format;
use alloc::vec::Vec;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Max-shifted softmax of one logit row.
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-Σ y_k log p_k` of a soft target against softmax(logits),
/// computed as `-Σ y_k (z_k - logsumexp(z))`. Returns `(probs, loss)`; the
/// gradient with respect to the logits is `probs - target`.
pub fn softmax_xent<F: Real>(logits: &[F], target: &[F]) -> Result<(Vec<F>, F)> {
    if logits.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: target.len(),
        });
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = max
        + logits
            .iter()
            .map(|&z| (z - max).exp())
            .fold(F::zero(), |a, b| a + b)
            .ln();
    let loss = logits
        .iter()
        .zip(target)
        .fold(F::zero(), |acc, (&z, &y)| acc - y * (z - lse));
    Ok((softmax(logits), loss))
}

/// Batch-mean soft-target cross-entropy over `logits [batch, K]`.
/// Returns `(probs [batch, K], mean loss, grad wrt logits)`.
pub fn softmax_xent_batch<F: Real>(logits: &Tensor<F>, targets: &[Vec<F>]) -> Result<(Tensor<F>, F, Tensor<F>)> {
    logits.expect_rank(2, "logits")?;
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for a batch of {b}",
            targets.len()
        )));
    }
    let inv_b = F::one() / F::from_usize(b).unwrap();
    let mut probs = Tensor::zeros(&[b, k]);
    let mut grad = Tensor::zeros(&[b, k]);
    let mut total = F::zero();
    for (i, (row, y)) in logits.data().chunks_exact(k).zip(targets).enumerate() {
        let (p, l) = softmax_xent(row, y)?;
        total = total + l;
        for j in 0..k {
            probs.data_mut()[i * k + j] = p[j];
            grad.data_mut()[i * k + j] = (p[j] - y[j]) * inv_b;
        }
    }
    Ok((probs, total * inv_b, grad))
}
