use alloc::format;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// `input [batch, in]`, `weights [in, out]`, `bias [out]` → `[batch, out]`.
pub fn dense<F: Real>(input: &Tensor<F>, weights: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (b, n_in) = (input.shape()[0], input.shape()[1]);
    let (w_in, n_out) = (weights.shape()[0], weights.shape()[1]);
    if w_in != n_in || bias.len() != n_out {
        return Err(Error::ShapeMismatch(format!(
            "dense input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[b, n_out]);
    let w = weights.data();
    for (xrow, yrow) in input
        .data()
        .chunks_exact(n_in)
        .zip(out.data_mut().chunks_exact_mut(n_out))
    {
        yrow.copy_from_slice(bias.data());
        for (i, &xv) in xrow.iter().enumerate() {
            for (y, &wv) in yrow.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *y = *y + xv * wv;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward<F: Real>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    weights: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (b, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = weights.shape()[1];
    if grad_out.shape() != [b, n_out] {
        return Err(Error::ShapeMismatch(format!(
            "dense grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [b, n_out]
        )));
    }
    let mut gx = Tensor::zeros(&[b, n_in]);
    let mut gw = Tensor::zeros(&[n_in, n_out]);
    let mut gb = Tensor::zeros(&[n_out]);
    let w = weights.data();
    for ((xrow, grow), gxrow) in input
        .data()
        .chunks_exact(n_in)
        .zip(grad_out.data().chunks_exact(n_out))
        .zip(gx.data_mut().chunks_exact_mut(n_in))
    {
        for (gbv, &g) in gb.data_mut().iter_mut().zip(grow) {
            *gbv = *gbv + g;
        }
        for i in 0..n_in {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            let mut s = F::zero();
            for (&wv, &g) in wrow.iter().zip(grow) {
                s = s + wv * g;
            }
            gxrow[i] = s;
            let xv = xrow[i];
            for (gwv, &g) in gw.data_mut()[i * n_out..(i + 1) * n_out].iter_mut().zip(grow) {
                *gwv = *gwv + xv * g;
            }
        }
    }
    Ok((gx, gw, gb))
}

pub fn relu<F: Real>(input: &Tensor<F>) -> Tensor<F> {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = F::zero()
        }
    });
    out
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<F: Real>(grad_out: &Tensor<F>, input: &Tensor<F>) -> Tensor<F> {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= F::zero() {
            *gv = F::zero();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dense_hand_case() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.1, 0.2]).unwrap();
        let y: Tensor<f64> = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[2.1, 3.2]);
    }

    #[test]
    fn relu_masks_non_positive() {
        let x = Tensor::new(&[4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        assert_eq!(relu::<f64>(&x).data(), &[0.0, 0.0, 2.0, 3.0]);
        let g = relu_backward(&Tensor::filled(&[4], 1.0), &x);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
