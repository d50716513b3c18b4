//! CNN-LSTM encoder, profile regressor and pair discriminator.

mod conv;
mod encoder;
mod lstm;
mod mlp;
mod norm;
mod params;

pub use conv::{conv1d_backward, conv1d_forward, conv_output_len};
pub use encoder::{encoder_backward, encoder_forward, encoder_forward_traced, EncoderTrace};
pub use lstm::{lstm_backward, lstm_forward, LstmTrace};
pub use mlp::{mlp_backward, mlp_forward, MlpTrace};
pub use norm::{group_norm_backward, group_norm_forward, GroupNormOutput, GN_EPS};
pub use params::{
    group_of, init_params, ConvLayerParams, EncoderParams, Linear, LstmParams, MlpParams, ModelParams, ParamGroup, Tensor,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::objectives::ProfilePrediction;
use crate::scalar::Scalar;

/// Which profile outputs are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskMode {
    Height,
    Age,
    Gender,
    Multi,
}

impl TaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Height => "height",
            TaskMode::Age => "age",
            TaskMode::Gender => "gender",
            TaskMode::Multi => "multi",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "height" => Ok(TaskMode::Height),
            "age" => Ok(TaskMode::Age),
            "gender" => Ok(TaskMode::Gender),
            "multi" => Ok(TaskMode::Multi),
            other => Err(Error::Config(format!(
                "task_mode `{other}` (expected height|age|gender|multi)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub conv_channels: usize,
    pub kernel_sizes: Vec<usize>,
    pub strides: Vec<usize>,
    pub latent_dim: usize,
    pub regressor_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub groupnorm_groups: usize,
    pub task_mode: TaskMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_channels: 512,
            kernel_sizes: vec![10, 8, 4, 4, 4],
            strides: vec![5, 4, 2, 2, 2],
            latent_dim: 512,
            regressor_hidden: vec![512, 128],
            discriminator_hidden: vec![1024, 128],
            groupnorm_groups: 16,
            task_mode: TaskMode::Multi,
        }
    }
}

/// Width of the regressor output: standardized height, standardized age,
/// gender logit.
pub const PROFILE_OUTPUTS: usize = 3;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kernel_sizes.len() != 5 || self.strides.len() != 5 {
            return bad(format!(
                "expected 5 kernel sizes and 5 strides, got {} and {}",
                self.kernel_sizes.len(),
                self.strides.len()
            ));
        }
        if self.kernel_sizes.iter().chain(&self.strides).any(|&v| v == 0) {
            return bad("kernel sizes and strides must be positive".into());
        }
        if self.latent_dim == 0 || self.conv_channels == 0 {
            return bad("latent_dim and conv_channels must be positive".into());
        }
        if self.groupnorm_groups == 0 || self.conv_channels % self.groupnorm_groups != 0 {
            return bad(format!(
                "groupnorm_groups {} must divide conv_channels {}",
                self.groupnorm_groups, self.conv_channels
            ));
        }
        if self.regressor_hidden.len() != 2 || self.discriminator_hidden.len() != 2 {
            return bad("regressor and discriminator need exactly 2 hidden layers".into());
        }
        if self.regressor_hidden.iter().chain(&self.discriminator_hidden).any(|&v| v == 0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    /// Frames produced by each conv layer for an input of `len` samples.
    pub fn frame_counts(&self, len: usize) -> Result<Vec<usize>> {
        let mut counts = Vec::with_capacity(self.kernel_sizes.len());
        let mut cur = len;
        for (&k, &s) in self.kernel_sizes.iter().zip(&self.strides) {
            cur = conv_output_len(cur, k, s).ok_or(Error::InputTooShort {
                len,
                min: self.min_input_len(),
            })?;
            counts.push(cur);
        }
        Ok(counts)
    }

    /// Shortest input yielding one frame after the last conv layer.
    pub fn min_input_len(&self) -> usize {
        self.kernel_sizes
            .iter()
            .zip(&self.strides)
            .rev()
            .fold(1, |need, (&k, &s)| (need - 1) * s + k)
    }
}

/// Maps a batch of latent codes (`B x N`) to profile predictions.
pub fn regressor_forward<T: Scalar>(
    params: &ModelParams<T>,
    z: ArrayView2<T>,
) -> Result<Vec<ProfilePrediction>> {
    let (out, _) = mlp_forward(&params.regressor, z)?;
    Ok(rows_to_predictions(&out))
}

/// Scores latent pairs: one logit per row of `[z1 ; z2]`. Logit > 0 means
/// "same speaker".
pub fn discriminator_forward<T: Scalar>(
    params: &ModelParams<T>,
    z1: ArrayView2<T>,
    z2: ArrayView2<T>,
) -> Result<Vec<T>> {
    let pairs = concat_pairs(z1, z2)?;
    let (out, _) = mlp_forward(&params.discriminator, pairs.view())?;
    Ok(out.column(0).to_vec())
}

pub(crate) fn concat_pairs<T: Scalar>(z1: ArrayView2<T>, z2: ArrayView2<T>) -> Result<Array2<T>> {
    if z1.dim() != z2.dim() {
        return Err(Error::Shape(format!(
            "discriminator inputs {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    Ok(ndarray::concatenate(ndarray::Axis(1), &[z1, z2]).expect("equal row counts"))
}

pub(crate) fn rows_to_predictions<T: Scalar>(out: &Array2<T>) -> Vec<ProfilePrediction> {
    out.rows()
        .into_iter()
        .map(|r| ProfilePrediction {
            height: r[0].as_f64(),
            age: r[1].as_f64(),
            gender_logit: r[2].as_f64(),
        })
        .collect()
}
