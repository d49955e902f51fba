//! One-dimensional convolution (cross-correlation, no filter flip) over
//! channels-last tensors `[batch, length, channels]`.

use alloc::format;
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-pad so that the output length is `ceil(length / stride)`.
    /// Odd padding puts the extra element on the right.
    Same,
    Valid,
}

/// Resolved output length and left padding for a sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub in_len: usize,
    pub out_len: usize,
    pub pad_left: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl WindowGeometry {
    pub fn new(in_len: usize, kernel: usize, stride: usize, padding: Padding) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kernel} and stride {stride} must be positive"
            )));
        }
        if in_len == 0 {
            return Err(Error::ShapeMismatch("empty input".into()));
        }
        let (out_len, pad_left) = match padding {
            Padding::Valid => {
                if kernel > in_len {
                    return Err(Error::ShapeMismatch(format!(
                        "kernel {kernel} longer than input {in_len}"
                    )));
                }
                ((in_len - kernel) / stride + 1, 0)
            }
            Padding::Same => {
                let out = in_len.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(in_len);
                (out, total / 2)
            }
        };
        Ok(Self {
            in_len,
            out_len,
            pad_left,
            kernel,
            stride,
        })
    }

    /// Input position read by tap `tap` of output `out`, if inside the signal.
    #[inline]
    pub fn source(&self, out: usize, tap: usize) -> Option<usize> {
        let pos = (out * self.stride + tap).checked_sub(self.pad_left)?;
        (pos < self.in_len).then_some(pos)
    }

    /// Range of taps that land inside the signal for output `out`.
    #[inline]
    fn taps(&self, out: usize) -> (usize, usize, usize) {
        let start = out * self.stride;
        let first_tap = self.pad_left.saturating_sub(start);
        let last_tap = (self.in_len + self.pad_left).saturating_sub(start).min(self.kernel);
        (first_tap, last_tap, start + first_tap - self.pad_left)
    }
}

fn check_shapes<F: Real>(input: &Tensor<F>, filters: &Tensor<F>) -> Result<(usize, usize, usize, usize, usize)> {
    input.expect_rank(3, "conv1d input")?;
    filters.expect_rank(3, "conv1d filters")?;
    let (b, l, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, fcin, cout) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    if fcin != cin {
        return Err(Error::ShapeMismatch(format!(
            "filters expect {fcin} input channels, input has {cin}"
        )));
    }
    Ok((b, l, cin, k, cout))
}

/// `input [batch, length, in_ch]`, `filters [kernel, in_ch, out_ch]` →
/// `[batch, out_len, out_ch]`.
pub fn conv1d<F: Real>(input: &Tensor<F>, filters: &Tensor<F>, stride: usize, padding: Padding) -> Result<Tensor<F>> {
    let (b, l, cin, k, cout) = check_shapes(input, filters)?;
    let g = WindowGeometry::new(l, k, stride, padding)?;
    let mut out = Tensor::zeros(&[b, g.out_len, cout]);
    let x = input.data();
    let w = filters.data();
    let y = out.data_mut();
    for bi in 0..b {
        let xb = &x[bi * l * cin..(bi + 1) * l * cin];
        for o in 0..g.out_len {
            let acc = &mut y[(bi * g.out_len + o) * cout..][..cout];
            let (t0, t1, p0) = g.taps(o);
            for (tap, pos) in (t0..t1).zip(p0..) {
                let xrow = &xb[pos * cin..(pos + 1) * cin];
                for (c, &xv) in xrow.iter().enumerate() {
                    let wrow = &w[(tap * cin + c) * cout..][..cout];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a = *a + xv * wv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv1d`]: returns `(grad_input, grad_filters)`.
pub fn conv1d_backward<F: Real>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    filters: &Tensor<F>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (gin, gw) = conv1d_backward_impl(grad_out, input, filters, stride, padding, true)?;
    Ok((gin.expect("input gradient requested"), gw))
}

/// Filter gradient only; used for the first layer where the input is data.
pub fn conv1d_filter_grad<F: Real>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    filters: &Tensor<F>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<F>> {
    Ok(conv1d_backward_impl(grad_out, input, filters, stride, padding, false)?.1)
}

fn conv1d_backward_impl<F: Real>(
    grad_out: &Tensor<F>,
    input: &Tensor<F>,
    filters: &Tensor<F>,
    stride: usize,
    padding: Padding,
    want_input: bool,
) -> Result<(Option<Tensor<F>>, Tensor<F>)> {
    let (b, l, cin, k, cout) = check_shapes(input, filters)?;
    let g = WindowGeometry::new(l, k, stride, padding)?;
    if grad_out.shape() != [b, g.out_len, cout] {
        return Err(Error::ShapeMismatch(format!(
            "conv1d grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [b, g.out_len, cout]
        )));
    }
    let mut gin = Tensor::zeros(if want_input { input.shape() } else { &[0] });
    let mut gw = Tensor::zeros(filters.shape());
    let x = input.data();
    let w = filters.data();
    let go = grad_out.data();
    let gx = gin.data_mut();
    let gwd = gw.data_mut();
    for bi in 0..b {
        for o in 0..g.out_len {
            let grow = &go[(bi * g.out_len + o) * cout..][..cout];
            let (t0, t1, p0) = g.taps(o);
            for (tap, pos) in (t0..t1).zip(p0..) {
                let base = (bi * l + pos) * cin;
                for c in 0..cin {
                    let xv = x[base + c];
                    let off = (tap * cin + c) * cout;
                    if want_input {
                        let wrow = &w[off..off + cout];
                        let mut s = F::zero();
                        for (&wv, &gv) in wrow.iter().zip(grow) {
                            s = s + wv * gv;
                        }
                        gx[base + c] = gx[base + c] + s;
                    }
                    let gwrow = &mut gwd[off..off + cout];
                    for (gwv, &gv) in gwrow.iter_mut().zip(grow) {
                        *gwv = *gwv + xv * gv;
                    }
                }
            }
        }
    }
    Ok((want_input.then_some(gin), gw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn delta_and_box_filters() {
        let x = t(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]);
        let delta = t(&[2, 1, 1], &[1.0, 0.0]);
        assert_eq!(conv1d(&x, &delta, 1, Padding::Valid).unwrap().data(), &[1.0, 2.0, 3.0]);
        let boxf = t(&[2, 1, 1], &[1.0, 1.0]);
        assert_eq!(conv1d(&x, &boxf, 1, Padding::Valid).unwrap().data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn same_padding_preserves_length_at_stride_one() {
        let x = t(&[1, 5, 1], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let f = t(&[3, 1, 1], &[1.0, 1.0, 1.0]);
        let y = conv1d(&x, &f, 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0, 9.0]);
        let g = WindowGeometry::new(9000, 50, 6, Padding::Same).unwrap();
        assert_eq!(g.out_len, 1500);
        let g = WindowGeometry::new(9000, 400, 50, Padding::Same).unwrap();
        assert_eq!(g.out_len, 180);
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let x = t(&[1, 5, 2], &[0.3, -1.0, 2.0, 0.5, 0.1, 0.7, -0.2, 0.4, 1.1, -0.9]);
        let f = t(
            &[2, 2, 3],
            &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, -0.8, 0.9, 1.0, 1.1, 1.2],
        );
        let y = conv1d(&x, &f, 1, Padding::Valid).unwrap();
        let (gi, gw) = conv1d_backward(&Tensor::zeros(y.shape()), &x, &f, 1, Padding::Valid).unwrap();
        assert!(gi.data().iter().all(|v| *v == 0.0));
        assert!(gw.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_tap_filter_gradient_is_inner_product() {
        let x = t(&[1, 4, 1], &[1.0, -2.0, 3.0, 0.5]);
        let f = t(&[1, 1, 1], &[0.7]);
        let go = t(&[1, 4, 1], &[0.2, 0.4, -1.0, 2.0]);
        let (_, gw) = conv1d_backward(&go, &x, &f, 1, Padding::Valid).unwrap();
        let expected: f64 = x.data().iter().zip(go.data()).map(|(a, b)| a * b).sum();
        assert_eq!(gw.data(), &[expected]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 2]);
        let f = Tensor::<f64>::zeros(&[2, 1, 1]);
        assert!(matches!(
            conv1d(&x, &f, 1, Padding::Valid),
            Err(Error::ShapeMismatch(_))
        ));
        let f = Tensor::<f64>::zeros(&[5, 2, 1]);
        assert!(conv1d(&x, &f, 1, Padding::Valid).is_err());
    }
}
