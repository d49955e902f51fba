//! Batch normalization over the last axis of a `[batch, ..., features]`
//! tensor. Statistics are taken over every axis except the feature axis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_DECAY: f64 = 0.999;

/// Running statistics used at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState<F> {
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub decay: f64,
    pub epsilon: f64,
}

impl<F: Real> BatchNormState<F> {
    pub fn new(features: usize, decay: f64, epsilon: f64) -> Self {
        Self {
            running_mean: vec![F::zero(); features],
            running_var: vec![F::one(); features],
            decay,
            epsilon,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the batch statistics and update the running averages.
    Batch,
    /// Normalize with the running averages.
    Running,
}

/// Values kept from the forward pass for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    mode: BnMode,
    normalized: Tensor<F>,
    inv_std: Vec<F>,
}

fn dims<F: Real>(input: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm needs [batch, .., features], got {shape:?}"
        )));
    }
    let c = *shape.last().unwrap();
    let rows = input.len() / c.max(1);
    Ok((shape[0], rows, c))
}

pub fn batchnorm<F: Real>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    state: &mut BatchNormState<F>,
    mode: BnMode,
) -> Result<(Tensor<F>, BatchNormCache<F>)> {
    let (batch, rows, c) = dims(input)?;
    check_params(c, gamma, beta, state)?;
    match mode {
        BnMode::Batch => {
            if batch < 2 {
                return Err(Error::DegenerateBatch);
            }
            let n = F::from_usize(rows).unwrap();
            let x = input.data();
            let mut mean = vec![F::zero(); c];
            for row in x.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m = *m + v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![F::zero(); c];
            for row in x.chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *s = *s + d * d;
                }
            }
            var.iter_mut().for_each(|s| *s = *s / n);
            let decay = F::from_f64_lossy(state.decay);
            let keep = F::one() - decay;
            for i in 0..c {
                state.running_mean[i] = decay * state.running_mean[i] + keep * mean[i];
                state.running_var[i] = decay * state.running_var[i] + keep * var[i];
            }
            Ok(normalize(input, gamma, beta, &mean, &var, state.epsilon, mode))
        }
        BnMode::Running => batchnorm_running(input, gamma, beta, state),
    }
}

/// Inference-mode normalization; never mutates the running statistics.
pub fn batchnorm_running<F: Real>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    state: &BatchNormState<F>,
) -> Result<(Tensor<F>, BatchNormCache<F>)> {
    let (_, _, c) = dims(input)?;
    check_params(c, gamma, beta, state)?;
    Ok(normalize(
        input,
        gamma,
        beta,
        &state.running_mean,
        &state.running_var,
        state.epsilon,
        BnMode::Running,
    ))
}

fn check_params<F: Real>(c: usize, gamma: &Tensor<F>, beta: &Tensor<F>, state: &BatchNormState<F>) -> Result<()> {
    if gamma.len() != c || beta.len() != c || state.features() != c {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm over {c} features with gamma {:?}, beta {:?}, state {}",
            gamma.shape(),
            beta.shape(),
            state.features()
        )));
    }
    Ok(())
}

fn normalize<F: Real>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    mean: &[F],
    var: &[F],
    epsilon: f64,
    mode: BnMode,
) -> (Tensor<F>, BatchNormCache<F>) {
    let c = mean.len();
    let eps = F::from_f64_lossy(epsilon);
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let (g, b) = (gamma.data(), beta.data());
    for ((xrow, nrow), orow) in input
        .data()
        .chunks_exact(c)
        .zip(normalized.data_mut().chunks_exact_mut(c))
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        for i in 0..c {
            let xh = (xrow[i] - mean[i]) * inv_std[i];
            nrow[i] = xh;
            orow[i] = g[i] * xh + b[i];
        }
    }
    (
        out,
        BatchNormCache {
            mode,
            normalized,
            inv_std,
        },
    )
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<F: Real>(
    grad_out: &Tensor<F>,
    gamma: &Tensor<F>,
    cache: &BatchNormCache<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm grad_out {:?} vs forward {:?}",
            grad_out.shape(),
            cache.normalized.shape()
        )));
    }
    let c = gamma.len();
    let rows = grad_out.len() / c;
    let dy = grad_out.data();
    let xh = cache.normalized.data();
    let g = gamma.data();
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for (dyrow, xhrow) in dy.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for i in 0..c {
            dbeta[i] = dbeta[i] + dyrow[i];
            dgamma[i] = dgamma[i] + dyrow[i] * xhrow[i];
        }
    }
    let mut dx = Tensor::zeros(grad_out.shape());
    match cache.mode {
        BnMode::Batch => {
            // dx = inv_std/n * (n*dxh - sum(dxh) - xh*sum(dxh*xh)), dxh = dy*gamma
            let n = F::from_usize(rows).unwrap();
            for ((dxrow, dyrow), xhrow) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(dy.chunks_exact(c))
                .zip(xh.chunks_exact(c))
            {
                for i in 0..c {
                    let scale = g[i] * cache.inv_std[i] / n;
                    dxrow[i] = scale * (n * dyrow[i] - dbeta[i] - xhrow[i] * dgamma[i]);
                }
            }
        }
        BnMode::Running => {
            for (dxrow, dyrow) in dx.data_mut().chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                for i in 0..c {
                    dxrow[i] = dyrow[i] * g[i] * cache.inv_std[i];
                }
            }
        }
    }
    Ok((dx, Tensor::new(&[c], dgamma)?, Tensor::new(&[c], dbeta)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f64> {
        let v: Vec<f64> = (0..24).map(|i| ((i * 37 % 11) as f64) * 0.3 - 1.2).collect();
        Tensor::new(&[2, 4, 3], v).unwrap()
    }

    #[test]
    fn train_mode_normalizes_per_feature() {
        let x = sample();
        let mut st = BatchNormState::new(3, DEFAULT_DECAY, DEFAULT_EPSILON);
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let (y, _) = batchnorm(&x, &ones, &zeros, &mut st, BnMode::Batch).unwrap();
        for f in 0..3 {
            let col: Vec<f64> = y.data().iter().skip(f).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_decay() {
        let x = sample();
        let mut st = BatchNormState::new(3, 0.9, DEFAULT_EPSILON);
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        batchnorm(&x, &ones, &zeros, &mut st, BnMode::Batch).unwrap();
        let col0: Vec<f64> = x.data().iter().step_by(3).copied().collect();
        let m = col0.iter().sum::<f64>() / 8.0;
        assert!((st.running_mean[0] - 0.1 * m).abs() < 1e-12);
        // inference never touches the state
        let before = st.clone();
        batchnorm(&x, &ones, &zeros, &mut st, BnMode::Running).unwrap();
        assert_eq!(before, st);
    }

    #[test]
    fn infer_matches_train_when_running_stats_equal_batch_stats() {
        let x = sample();
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        // decay 0 copies the batch statistics into the running averages
        let mut st = BatchNormState::new(3, 0.0, DEFAULT_EPSILON);
        let (train, _) = batchnorm(&x, &ones, &zeros, &mut st, BnMode::Batch).unwrap();
        let (infer, _) = batchnorm(&x, &ones, &zeros, &mut st, BnMode::Running).unwrap();
        for (a, b) in train.data().iter().zip(infer.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_batch_is_degenerate() {
        let x = Tensor::<f64>::zeros(&[1, 4, 3]);
        let mut st = BatchNormState::new(3, DEFAULT_DECAY, DEFAULT_EPSILON);
        let r = batchnorm(
            &x,
            &Tensor::filled(&[3], 1.0),
            &Tensor::zeros(&[3]),
            &mut st,
            BnMode::Batch,
        );
        assert!(matches!(r, Err(Error::DegenerateBatch)));
    }
}
