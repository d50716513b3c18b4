//! Raw-waveform encoder: five conv blocks (conv, group norm, ReLU) feeding an
//! LSTM whose last hidden state is the latent code.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::{
    conv1d_backward, conv1d_forward, group_norm_backward, group_norm_forward, lstm_backward,
    lstm_forward, EncoderParams, LstmTrace, ModelConfig,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct BlockTrace<T> {
    /// Post-ReLU output, `(channels, frames)`.
    out: Array2<T>,
    xhat: Array2<T>,
    rstd: Vec<T>,
}

/// Activations of one utterance's forward pass.
pub struct EncoderTrace<T> {
    blocks: Vec<BlockTrace<T>>,
    lstm_inputs: Array2<T>,
    lstm: LstmTrace<T>,
}

impl<T: Scalar> EncoderTrace<T> {
    /// Per-block frame counts.
    pub fn frame_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out.ncols()).collect()
    }

    /// Post-ReLU activations of every conv block.
    pub fn relu_outputs(&self) -> impl Iterator<Item = &Array2<T>> {
        self.blocks.iter().map(|b| &b.out)
    }
}

fn check_len(config: &ModelConfig, len: usize) -> Result<()> {
    let min = config.min_input_len();
    if len < min {
        return Err(Error::InputTooShort { len, min });
    }
    Ok(())
}

fn block_forward<T: Scalar>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    layer: usize,
    input: ArrayView2<T>,
) -> BlockTrace<T> {
    let p = &params.conv[layer];
    let y = conv1d_forward(input, &p.weight, &p.bias, config.strides[layer]);
    let gn = group_norm_forward(
        y.view(),
        config.groupnorm_groups,
        &p.norm_scale.data,
        &p.norm_shift.data,
    );
    let mut out = gn.out;
    out.mapv_inplace(|v| v.max(T::zero()));
    BlockTrace {
        out,
        xhat: gn.xhat,
        rstd: gn.rstd,
    }
}

/// Encodes a single utterance, keeping everything needed for backprop.
pub fn encoder_forward_traced<T: Scalar>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    samples: &[T],
) -> Result<(Array1<T>, EncoderTrace<T>)> {
    check_len(config, samples.len())?;
    let wave = ArrayView2::from_shape((1, samples.len()), samples).expect("row vector");
    let mut blocks: Vec<BlockTrace<T>> = Vec::with_capacity(params.conv.len());
    for layer in 0..params.conv.len() {
        let input = match blocks.last() {
            Some(prev) => prev.out.view(),
            None => wave,
        };
        let b = block_forward(params, config, layer, input);
        blocks.push(b);
    }
    let lstm_inputs = blocks.last().expect("five blocks").out.t().to_owned();
    let (z, lstm) = lstm_forward(&params.lstm, lstm_inputs.view());
    Ok((
        z,
        EncoderTrace {
            blocks,
            lstm_inputs,
            lstm,
        },
    ))
}

fn encode_one<T: Scalar>(params: &EncoderParams<T>, config: &ModelConfig, samples: &[T]) -> Result<Array1<T>> {
    check_len(config, samples.len())?;
    let mut cur = ArrayView2::from_shape((1, samples.len()), samples)
        .expect("row vector")
        .to_owned();
    for layer in 0..params.conv.len() {
        cur = block_forward(params, config, layer, cur.view()).out;
    }
    let (z, _) = lstm_forward(&params.lstm, cur.t());
    Ok(z)
}

/// Encodes every row of `batch` into a `(batch, latent_dim)` matrix.
///
/// Rows are independent, so they may have different lengths.
pub fn encoder_forward<T: Scalar, S: AsRef<[T]> + Sync>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    batch: &[S],
) -> Result<Array2<T>> {
    let codes: Vec<Array1<T>> = batch
        .par_iter()
        .map(|row| encode_one(params, config, row.as_ref()))
        .collect::<Result<_>>()?;
    let n = params.lstm.hidden();
    let mut out = Array2::<T>::zeros((batch.len(), n));
    for (mut dst, z) in out.rows_mut().into_iter().zip(codes) {
        dst.assign(&z);
    }
    Ok(out)
}

/// Gradient of `dz · f(x)` with respect to the encoder parameters.
///
/// The forward pass is recomputed here so callers only hold latent codes
/// between the forward and backward phases.
pub fn encoder_backward<T: Scalar>(
    params: &EncoderParams<T>,
    config: &ModelConfig,
    samples: &[T],
    dz: ArrayView1<T>,
) -> Result<EncoderParams<T>> {
    let (_, trace) = encoder_forward_traced(params, config, samples)?;
    let mut grads = params.zeros_like();
    let d_inputs = lstm_backward(
        &params.lstm,
        trace.lstm_inputs.view(),
        &trace.lstm,
        dz,
        &mut grads.lstm,
    );
    let mut d_out = d_inputs.t().to_owned();
    let wave = ArrayView2::from_shape((1, samples.len()), samples).expect("row vector");
    for layer in (0..params.conv.len()).rev() {
        let block = &trace.blocks[layer];
        let p = &params.conv[layer];
        let g = &mut grads.conv[layer];
        d_out.zip_mut_with(&block.out, |d, &a| {
            if a <= T::zero() {
                *d = T::zero();
            }
        });
        let dy = group_norm_backward(
            d_out.view(),
            block.xhat.view(),
            &block.rstd,
            &p.norm_scale.data,
            &mut g.norm_scale.data,
            &mut g.norm_shift.data,
        );
        let input = if layer == 0 {
            wave
        } else {
            trace.blocks[layer - 1].out.view()
        };
        let dx = conv1d_backward(
            input,
            &p.weight,
            config.strides[layer],
            dy.view(),
            &mut g.weight,
            &mut g.bias,
            layer > 0,
        );
        if let Some(dx) = dx {
            d_out = dx;
        }
    }
    Ok(grads)
}
