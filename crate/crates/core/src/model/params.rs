use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng as _;

use super::{ModelConfig, PROFILE_OUTPUTS};
use crate::scalar::Scalar;
use crate::seed::Rng;

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Views the tensor as a matrix: first axis by the product of the rest.
    pub fn matrix(&self) -> ArrayView2<'_, T> {
        let rows = self.shape[0];
        let cols = self.data.len() / rows.max(1);
        ArrayView2::from_shape((rows, cols), &self.data).expect("contiguous tensor")
    }

    pub fn matrix_mut(&mut self) -> ArrayViewMut2<'_, T> {
        let rows = self.shape[0];
        let cols = self.data.len() / rows.max(1);
        ArrayViewMut2::from_shape((rows, cols), &mut self.data).expect("contiguous tensor")
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T> {
    /// `(out_channels, in_channels, kernel)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub norm_scale: Tensor<T>,
    pub norm_shift: Tensor<T>,
}

/// Gate blocks are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// `(4H, input)`
    pub w_ih: Tensor<T>,
    /// `(4H, H)`
    pub w_hh: Tensor<T>,
    /// `(4H)`
    pub bias: Tensor<T>,
}

impl<T> LstmParams<T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `(out, in)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Fully connected stack; ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Linear<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub conv: Vec<ConvLayerParams<T>>,
    pub lstm: LstmParams<T>,
}

/// All trainable arrays: encoder (θ), regressor (ψ), discriminator (ω).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub regressor: MlpParams<T>,
    pub discriminator: MlpParams<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("encoder.conv{i}.weight"), &c.weight));
            out.push((format!("encoder.conv{i}.bias"), &c.bias));
            out.push((format!("encoder.norm{i}.scale"), &c.norm_scale));
            out.push((format!("encoder.norm{i}.shift"), &c.norm_shift));
        }
        out.push(("encoder.lstm.w_ih".into(), &self.lstm.w_ih));
        out.push(("encoder.lstm.w_hh".into(), &self.lstm.w_hh));
        out.push(("encoder.lstm.bias".into(), &self.lstm.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut c.norm_scale);
            out.push(&mut c.norm_shift);
        }
        out.push(&mut self.lstm.w_ih);
        out.push(&mut self.lstm.w_hh);
        out.push(&mut self.lstm.bias);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<T>| Tensor::zeros(&t.shape);
        Self {
            conv: self
                .conv
                .iter()
                .map(|c| ConvLayerParams {
                    weight: z(&c.weight),
                    bias: z(&c.bias),
                    norm_scale: z(&c.norm_scale),
                    norm_shift: z(&c.norm_shift),
                })
                .collect(),
            lstm: LstmParams {
                w_ih: z(&self.lstm.w_ih),
                w_hh: z(&self.lstm.w_hh),
                bias: z(&self.lstm.bias),
            },
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        let theirs: Vec<&Tensor<T>> = other.named().into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(theirs) {
            a.add_assign(b);
        }
    }
}

impl<T: Scalar> MlpParams<T> {
    fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.fc{i}.weight"), &l.weight));
            out.push((format!("{prefix}.fc{i}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Tensor::zeros(&l.weight.shape),
                    bias: Tensor::zeros(&l.bias.shape),
                })
                .collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape[1]
    }
}

/// Parameter group a named array belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Regressor,
    Discriminator,
}

impl<T: Scalar> ModelParams<T> {
    /// Every array with its unique name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder.named();
        out.extend(self.regressor.named("regressor"));
        out.extend(self.discriminator.named("discriminator"));
        out
    }

    /// Mutable arrays in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.regressor.tensors_mut());
        out.extend(self.discriminator.tensors_mut());
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            regressor: self.regressor.zeros_like(),
            discriminator: self.discriminator.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_shaped(self);
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    fn zeros_shaped<S: Scalar>(like: &ModelParams<S>) -> Self {
        let z = |t: &Tensor<S>| Tensor::<T>::zeros(&t.shape);
        let mlp = |m: &MlpParams<S>| MlpParams {
            layers: m
                .layers
                .iter()
                .map(|l| Linear {
                    weight: z(&l.weight),
                    bias: z(&l.bias),
                })
                .collect(),
        };
        ModelParams {
            encoder: EncoderParams {
                conv: like
                    .encoder
                    .conv
                    .iter()
                    .map(|c| ConvLayerParams {
                        weight: z(&c.weight),
                        bias: z(&c.bias),
                        norm_scale: z(&c.norm_scale),
                        norm_shift: z(&c.norm_shift),
                    })
                    .collect(),
                lstm: LstmParams {
                    w_ih: z(&like.encoder.lstm.w_ih),
                    w_hh: z(&like.encoder.lstm.w_hh),
                    bias: z(&like.encoder.lstm.bias),
                },
            },
            regressor: mlp(&like.regressor),
            discriminator: mlp(&like.discriminator),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        let theirs: Vec<&Tensor<T>> = other.named().into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(theirs) {
            a.add_assign(b);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm of each parameter group.
    pub fn group_norms(&self) -> [(ParamGroup, f64); 3] {
        let mut sums = [0.0f64; 3];
        for (name, t) in self.named() {
            let slot = group_of(&name) as usize;
            sums[slot] += t.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
        [
            (ParamGroup::Encoder, sums[0].sqrt()),
            (ParamGroup::Regressor, sums[1].sqrt()),
            (ParamGroup::Discriminator, sums[2].sqrt()),
        ]
    }
}

pub fn group_of(name: &str) -> ParamGroup {
    if name.starts_with("encoder.") {
        ParamGroup::Encoder
    } else if name.starts_with("regressor.") {
        ParamGroup::Regressor
    } else {
        ParamGroup::Discriminator
    }
}

fn init_linear<T: Scalar>(inp: usize, out: usize, rng: &mut Rng) -> Linear<T> {
    Linear {
        weight: Tensor::uniform(&[out, inp], 1.0 / (inp as f64).sqrt(), rng),
        bias: Tensor::zeros(&[out]),
    }
}

fn init_mlp<T: Scalar>(inp: usize, hidden: &[usize], out: usize, rng: &mut Rng) -> MlpParams<T> {
    let mut widths = vec![inp];
    widths.extend_from_slice(hidden);
    widths.push(out);
    MlpParams {
        layers: widths
            .windows(2)
            .map(|w| init_linear(w[0], w[1], rng))
            .collect(),
    }
}

/// Fresh parameters: weights uniform in `±1/sqrt(fan_in)`, biases zero,
/// group-norm scale 1 and shift 0, LSTM forget-gate bias 1.
pub fn init_params<T: Scalar>(config: &ModelConfig, rng: &mut Rng) -> ModelParams<T> {
    let c = config.conv_channels;
    let mut conv = Vec::with_capacity(config.kernel_sizes.len());
    let mut in_ch = 1;
    for &k in &config.kernel_sizes {
        let fan_in = (in_ch * k) as f64;
        conv.push(ConvLayerParams {
            weight: Tensor::uniform(&[c, in_ch, k], 1.0 / fan_in.sqrt(), rng),
            bias: Tensor::zeros(&[c]),
            norm_scale: Tensor::filled(&[c], T::one()),
            norm_shift: Tensor::zeros(&[c]),
        });
        in_ch = c;
    }
    let h = config.latent_dim;
    let mut bias = Tensor::zeros(&[4 * h]);
    for v in &mut bias.data[h..2 * h] {
        *v = T::one();
    }
    let lstm = LstmParams {
        w_ih: Tensor::uniform(&[4 * h, c], 1.0 / (c as f64).sqrt(), rng),
        w_hh: Tensor::uniform(&[4 * h, h], 1.0 / (h as f64).sqrt(), rng),
        bias,
    };
    ModelParams {
        encoder: EncoderParams { conv, lstm },
        regressor: init_mlp(h, &config.regressor_hidden, PROFILE_OUTPUTS, rng),
        discriminator: init_mlp(2 * h, &config.discriminator_hidden, 1, rng),
    }
}
