//! Fully connected stacks for the regressor and discriminator heads.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inputs to every layer (post-ReLU for hidden layers).
pub struct MlpTrace<T> {
    pub inputs: Vec<Array2<T>>,
}

/// `x` is `(batch, in)`; returns `(batch, out)`.
pub fn mlp_forward<T: Scalar>(params: &MlpParams<T>, x: ArrayView2<T>) -> Result<(Array2<T>, MlpTrace<T>)> {
    if x.ncols() != params.input_width() {
        return Err(Error::Shape(format!(
            "MLP expects width {}, got {}",
            params.input_width(),
            x.ncols()
        )));
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut cur = x.to_owned();
    for (li, layer) in params.layers.iter().enumerate() {
        let mut out = cur.dot(&layer.weight.matrix().t());
        out += &ArrayView1::from(&layer.bias.data);
        if li != last {
            out.mapv_inplace(|v| v.max(T::zero()));
        }
        inputs.push(cur);
        cur = out;
    }
    Ok((cur, MlpTrace { inputs }))
}

/// Returns the input gradient and accumulates parameter gradients.
pub fn mlp_backward<T: Scalar>(
    params: &MlpParams<T>,
    trace: &MlpTrace<T>,
    dout: ArrayView2<T>,
    grads: &mut MlpParams<T>,
) -> Array2<T> {
    let mut d = dout.to_owned();
    for li in (0..params.layers.len()).rev() {
        let input = &trace.inputs[li];
        let g = &mut grads.layers[li];
        {
            let mut dw = g.weight.matrix_mut();
            ndarray::linalg::general_mat_mul(T::one(), &d.t(), input, T::one(), &mut dw);
        }
        for (b, v) in g.bias.data.iter_mut().zip(d.sum_axis(Axis(0))) {
            *b = *b + v;
        }
        let mut dx = d.dot(&params.layers[li].weight.matrix());
        if li > 0 {
            // input of this layer is the ReLU output of the previous one
            dx.zip_mut_with(input, |g, &a| {
                if a <= T::zero() {
                    *g = T::zero();
                }
            });
        }
        d = dx;
    }
    d
}
