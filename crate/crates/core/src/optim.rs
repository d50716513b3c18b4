//! DiffGrad: Adam moments with an element-wise friction factor
//! `ξ = σ(|g_prev - g|)` that damps steps where the gradient is not changing.

use crate::error::{Error, Result};
use crate::model::{ModelParams, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffGradHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When false, ξ is fixed at 1 and the update is plain Adam.
    pub friction: bool,
}

impl Default for DiffGradHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            friction: true,
        }
    }
}

/// Per-array optimizer state, aligned with [`ModelParams::named`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub g_prev: Vec<Tensor<T>>,
    pub t: u64,
    pub hyper: DiffGradHyper,
}

pub fn diffgrad_init<T: Scalar>(params: &ModelParams<T>, hyper: DiffGradHyper) -> OptState<T> {
    let zeros = || -> Vec<Tensor<T>> {
        params
            .named()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(&t.shape))
            .collect()
    };
    OptState {
        m: zeros(),
        v: zeros(),
        g_prev: zeros(),
        t: 0,
        hyper,
    }
}

/// Friction coefficient for one coordinate.
#[inline]
pub fn friction<T: Scalar>(g_prev: T, g: T) -> T {
    T::one() / (T::one() + (-(g_prev - g).abs()).exp())
}

/// Updates one flat array in place. `t` is the 1-based step index.
#[allow(clippy::too_many_arguments)]
pub fn diffgrad_update_slice<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    g_prev: &mut [T],
    t: u64,
    hyper: &DiffGradHyper,
) {
    let b1 = T::of(hyper.beta1);
    let b2 = T::of(hyper.beta2);
    let one = T::one();
    let bc1 = T::of(1.0 - hyper.beta1.powf(t as f64));
    let bc2 = T::of(1.0 - hyper.beta2.powf(t as f64));
    let lr = T::of(hyper.lr);
    let eps = T::of(hyper.eps);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let xi = if hyper.friction { friction(g_prev[i], g) } else { one };
        theta[i] = theta[i] - lr * xi * m_hat / (v_hat.sqrt() + eps);
        g_prev[i] = g;
    }
}

/// One optimizer step over every parameter array.
pub fn diffgrad_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut OptState<T>,
) -> Result<()> {
    let grads = grads.named();
    for (name, g) in &grads {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let tensors = params.tensors_mut();
    if tensors.len() != grads.len() || tensors.len() != state.m.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t;
    let hyper = state.hyper;
    for (k, theta) in tensors.into_iter().enumerate() {
        let g = grads[k].1;
        if theta.shape != g.shape || theta.shape != state.m[k].shape {
            return Err(Error::Shape(format!("{}: shape {:?} vs {:?}", grads[k].0, theta.shape, g.shape)));
        }
        diffgrad_update_slice(
            &mut theta.data,
            &g.data,
            &mut state.m[k].data,
            &mut state.v[k].data,
            &mut state.g_prev[k].data,
            t,
            &hyper,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::seed::stream;

    fn tiny() -> ModelConfig {
        ModelConfig {
            conv_channels: 4,
            latent_dim: 3,
            groupnorm_groups: 2,
            regressor_hidden: vec![4, 3],
            discriminator_hidden: vec![4, 3],
            ..Default::default()
        }
    }

    #[test]
    fn init_is_zeroed_and_shaped() {
        let p: ModelParams<f64> = init_params(&tiny(), &mut stream(0, "init"));
        let s = diffgrad_init(&p, DiffGradHyper::default());
        assert_eq!(s.t, 0);
        for (k, (_, t)) in p.named().into_iter().enumerate() {
            for st in [&s.m[k], &s.v[k], &s.g_prev[k]] {
                assert_eq!(st.shape, t.shape);
                assert!(st.data.iter().all(|&v| v == 0.0));
            }
        }
        let h = DiffGradHyper::default();
        assert_eq!((h.lr, h.beta1, h.beta2, h.eps), (1e-3, 0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p: ModelParams<f64> = init_params(&tiny(), &mut stream(0, "init"));
        let before = p.clone();
        let mut s = diffgrad_init(&p, DiffGradHyper::default());
        diffgrad_step(&mut p, &before.zeros_like(), &mut s).unwrap();
        assert_eq!(p, before);
        assert!(s.m.iter().chain(&s.v).all(|t| t.data.iter().all(|&v| v == 0.0)));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn scalar_first_step() {
        let (mut th, mut m, mut v, mut gp) = ([1.0f64], [0.0], [0.0], [0.0]);
        diffgrad_update_slice(&mut th, &[0.5], &mut m, &mut v, &mut gp, 1, &DiffGradHyper::default());
        let xi = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((xi - 0.62246).abs() < 1e-5);
        let expected = 1.0 - 1e-3 * xi * 0.5 / (0.5 + 1e-8);
        assert!((th[0] - expected).abs() < 1e-15);
        assert!((th[0] - 0.99937754).abs() < 1e-8);
    }

    #[test]
    fn repeated_gradient_gives_half_friction() {
        assert_eq!(friction(0.7f64, 0.7), 0.5);
        let xi: f64 = friction(-3.0, 4.0);
        assert!(xi > 0.5 && xi <= 1.0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p: ModelParams<f64> = init_params(&tiny(), &mut stream(0, "init"));
        let mut g = p.zeros_like();
        g.regressor.layers[0].bias.data[0] = f64::NAN;
        let mut s = diffgrad_init(&p, DiffGradHyper::default());
        let err = diffgrad_step(&mut p, &g, &mut s).unwrap_err();
        assert!(err.to_string().contains("regressor.fc0.bias"));
        assert_eq!(s.t, 0);
    }
}
