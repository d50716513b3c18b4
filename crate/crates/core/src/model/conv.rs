//! Valid (unpadded) strided 1-D convolution via im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use super::Tensor;
use crate::scalar::Scalar;

/// `floor((len - kernel) / stride) + 1`, or `None` if `len < kernel`.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel).then(|| (len - kernel) / stride + 1)
}

/// Rows are output frames, columns are `(in_channel, tap)` pairs.
fn im2col<T: Scalar>(x: ArrayView2<T>, kernel: usize, stride: usize, frames: usize) -> Array2<T> {
    let (cin, _) = x.dim();
    let mut col = Array2::<T>::zeros((frames, cin * kernel));
    for (t, mut row) in col.axis_iter_mut(Axis(0)).enumerate() {
        let start = t * stride;
        for i in 0..cin {
            let src = x.row(i);
            for k in 0..kernel {
                row[i * kernel + k] = src[start + k];
            }
        }
    }
    col
}

/// `x` is `(in_channels, len)`; returns `(out_channels, frames)`.
///
/// The caller guarantees `len >= kernel`.
pub fn conv1d_forward<T: Scalar>(
    x: ArrayView2<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Array2<T> {
    let kernel = weight.shape[2];
    let frames = conv_output_len(x.ncols(), kernel, stride).expect("input shorter than kernel");
    let col = im2col(x, kernel, stride, frames);
    let w = weight.matrix();
    let mut out = Array2::<T>::zeros((w.nrows(), frames));
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(&bias.data) {
        row.fill(b);
    }
    general_mat_mul(T::one(), &w, &col.t(), T::one(), &mut out);
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input_grad` is set.
pub fn conv1d_backward<T: Scalar>(
    x: ArrayView2<T>,
    weight: &Tensor<T>,
    stride: usize,
    dout: ArrayView2<T>,
    dweight: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
    need_input_grad: bool,
) -> Option<Array2<T>> {
    let kernel = weight.shape[2];
    let frames = dout.ncols();
    let col = im2col(x, kernel, stride, frames);
    {
        let mut dw: ArrayViewMut2<T> = dweight.matrix_mut();
        general_mat_mul(T::one(), &dout, &col, T::one(), &mut dw);
    }
    for (db, row) in dbias.data.iter_mut().zip(dout.rows()) {
        *db = *db + row.sum();
    }
    if !need_input_grad {
        return None;
    }
    let dcol = dout.t().dot(&weight.matrix());
    let (cin, len) = x.dim();
    let mut dx = Array2::<T>::zeros((cin, len));
    for (t, row) in dcol.axis_iter(Axis(0)).enumerate() {
        let start = t * stride;
        for i in 0..cin {
            let mut dst = dx.row_mut(i);
            for k in 0..kernel {
                dst[start + k] = dst[start + k] + row[i * kernel + k];
            }
        }
    }
    Some(dx)
}
