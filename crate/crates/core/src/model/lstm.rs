//! Single-layer unidirectional LSTM returning the last hidden state.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::LstmParams;
use crate::scalar::{sigmoid, Scalar};

/// Per-step activations kept for backpropagation.
pub struct LstmTrace<T> {
    /// Post-nonlinearity gates `[i, f, g, o]`, `(steps, 4H)`.
    pub gates: Array2<T>,
    /// Cell states, `(steps, H)`.
    pub cells: Array2<T>,
    /// Hidden states, `(steps, H)`.
    pub hidden: Array2<T>,
}

/// `inputs` is `(steps, input_width)`. Returns the final hidden state.
pub fn lstm_forward<T: Scalar>(
    params: &LstmParams<T>,
    inputs: ArrayView2<T>,
) -> (Array1<T>, LstmTrace<T>) {
    let h = params.hidden();
    let steps = inputs.nrows();
    let w_hh = params.w_hh.matrix();
    let bias = ArrayView1::from(&params.bias.data);
    let mut gates = inputs.dot(&params.w_ih.matrix().t());
    gates += &bias;
    let mut cells = Array2::<T>::zeros((steps, h));
    let mut hidden = Array2::<T>::zeros((steps, h));
    let mut h_prev = Array1::<T>::zeros(h);
    let mut c_prev = Array1::<T>::zeros(h);
    for t in 0..steps {
        let mut pre = gates.row_mut(t);
        if t > 0 {
            pre += &w_hh.dot(&h_prev);
        }
        for j in 0..h {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h + j]);
            let g = pre[2 * h + j].tanh();
            let o = sigmoid(pre[3 * h + j]);
            pre[j] = i;
            pre[h + j] = f;
            pre[2 * h + j] = g;
            pre[3 * h + j] = o;
            let c = f * c_prev[j] + i * g;
            c_prev[j] = c;
            h_prev[j] = o * c.tanh();
        }
        cells.row_mut(t).assign(&c_prev);
        hidden.row_mut(t).assign(&h_prev);
    }
    (
        h_prev,
        LstmTrace {
            gates,
            cells,
            hidden,
        },
    )
}

/// Backpropagates a gradient on the final hidden state. Accumulates weight
/// gradients into `grads` and returns `(steps, input_width)` input gradients.
pub fn lstm_backward<T: Scalar>(
    params: &LstmParams<T>,
    inputs: ArrayView2<T>,
    trace: &LstmTrace<T>,
    d_last: ArrayView1<T>,
    grads: &mut LstmParams<T>,
) -> Array2<T> {
    let h = params.hidden();
    let steps = inputs.nrows();
    let one = T::one();
    let w_hh = params.w_hh.matrix();
    let mut dpre = Array2::<T>::zeros((steps, 4 * h));
    let mut dh = d_last.to_owned();
    let mut dc = Array1::<T>::zeros(h);
    for t in (0..steps).rev() {
        let gates = trace.gates.row(t);
        let c = trace.cells.row(t);
        let mut row = dpre.row_mut(t);
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = c[j].tanh();
            let c_prev = if t > 0 { trace.cells[[t - 1, j]] } else { T::zero() };
            let dcj = dc[j] + dh[j] * o * (one - tc * tc);
            row[j] = dcj * g * i * (one - i);
            row[h + j] = dcj * c_prev * f * (one - f);
            row[2 * h + j] = dcj * i * (one - g * g);
            row[3 * h + j] = dh[j] * tc * o * (one - o);
            dc[j] = dcj * f;
        }
        if t > 0 {
            dh = w_hh.t().dot(&row);
        }
    }
    {
        let mut dw_ih = grads.w_ih.matrix_mut();
        ndarray::linalg::general_mat_mul(one, &dpre.t(), &inputs, one, &mut dw_ih);
    }
    if steps > 1 {
        let mut dw_hh = grads.w_hh.matrix_mut();
        let d_later = dpre.slice(s![1.., ..]);
        let h_earlier = trace.hidden.slice(s![..steps - 1, ..]);
        ndarray::linalg::general_mat_mul(one, &d_later.t(), &h_earlier, one, &mut dw_hh);
    }
    for (b, v) in grads.bias.data.iter_mut().zip(dpre.sum_axis(Axis(0))) {
        *b = *b + v;
    }
    dpre.dot(&params.w_ih.matrix())
}
