use alloc::format;
use alloc::vec::Vec;

use super::conv::{Padding, WindowGeometry};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Forward max-pool result. `argmax[i]` is the input row (length position)
/// that produced output element `i`.
#[derive(Debug, Clone)]
pub struct PoolOutput<F> {
    pub output: Tensor<F>,
    pub argmax: Vec<usize>,
    pub input_shape: [usize; 3],
}

/// Max-pool over the length axis of `[batch, length, channels]`. Padded
/// positions never win; ties go to the lowest index.
pub fn maxpool1d<F: Real>(input: &Tensor<F>, pool: usize, stride: usize, padding: Padding) -> Result<PoolOutput<F>> {
    input.expect_rank(3, "maxpool1d input")?;
    let (b, l, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let g = WindowGeometry::new(l, pool, stride, padding)?;
    let mut out = Tensor::zeros(&[b, g.out_len, c]);
    let mut argmax = alloc::vec![0usize; b * g.out_len * c];
    let x = input.data();
    let y = out.data_mut();
    for bi in 0..b {
        for o in 0..g.out_len {
            let base = (bi * g.out_len + o) * c;
            let mut first = true;
            for tap in 0..pool {
                let Some(pos) = g.source(o, tap) else { continue };
                let row = &x[(bi * l + pos) * c..][..c];
                for ch in 0..c {
                    if first || row[ch] > y[base + ch] {
                        y[base + ch] = row[ch];
                        argmax[base + ch] = pos;
                    }
                }
                first = false;
            }
            if first {
                return Err(Error::ShapeMismatch(format!("pool window {o} is empty")));
            }
        }
    }
    Ok(PoolOutput {
        output: out,
        argmax,
        input_shape: [b, l, c],
    })
}

/// Routes each output gradient to the input element that won the max.
pub fn maxpool1d_backward<F: Real>(grad_out: &Tensor<F>, fwd: &PoolOutput<F>) -> Result<Tensor<F>> {
    if grad_out.shape() != fwd.output.shape() {
        return Err(Error::ShapeMismatch(format!(
            "maxpool grad_out {:?} vs output {:?}",
            grad_out.shape(),
            fwd.output.shape()
        )));
    }
    let [b, l, c] = fwd.input_shape;
    let out_len = fwd.output.shape()[1];
    let mut gin = Tensor::zeros(&[b, l, c]);
    let gx = gin.data_mut();
    let go = grad_out.data();
    for bi in 0..b {
        for o in 0..out_len {
            let base = (bi * out_len + o) * c;
            for ch in 0..c {
                let pos = fwd.argmax[base + ch];
                let idx = (bi * l + pos) * c + ch;
                gx[idx] = gx[idx] + go[base + ch];
            }
        }
    }
    Ok(gin)
}
