//! Naive loop implementations of the forward kernels, and sweeps comparing
//! them with the library over random instances. Each sweep returns the
//! largest absolute difference seen.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng as _;
use voxprofile::model::{
    conv1d_forward, encoder_forward, group_norm_forward, init_params, lstm_forward, mlp_forward, Linear,
    LstmParams, MlpParams, ModelConfig, ModelParams, Tensor, GN_EPS,
};
use voxprofile::seed::{stream, Rng};


fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn rand_matrix(r: usize, c: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn max_diff(a: &Array2<f64>, b: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m = m.max((a[[i, j]] - v).abs());
        }
    }
    m
}

pub fn naive_conv(x: &Array2<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize) -> Vec<Vec<f64>> {
    let (cout, cin, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let frames = (x.ncols() - k) / stride + 1;
    let mut out = vec![vec![0.0; frames]; cout];
    for o in 0..cout {
        for t in 0..frames {
            let mut acc = b.data[o];
            for c in 0..cin {
                for j in 0..k {
                    acc += w.data[(o * cin + c) * k + j] * x[[c, t * stride + j]];
                }
            }
            out[o][t] = acc;
        }
    }
    out
}

pub fn naive_group_norm(y: &Array2<f64>, groups: usize, scale: &[f64], shift: &[f64]) -> Vec<Vec<f64>> {
    let (c, t) = y.dim();
    let per = c / groups;
    let mut out = vec![vec![0.0; t]; c];
    for g in 0..groups {
        let mut vals = Vec::new();
        for ch in g * per..(g + 1) * per {
            for f in 0..t {
                vals.push(y[[ch, f]]);
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for ch in g * per..(g + 1) * per {
            for f in 0..t {
                out[ch][f] = (y[[ch, f]] - mean) / (var + GN_EPS).sqrt() * scale[ch] + shift[ch];
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate blocks are ordered input, forget, cell, output.
pub fn naive_lstm(p: &LstmParams<f64>, x: &Array2<f64>) -> Vec<f64> {
    let h = p.w_hh.shape[1];
    let c_in = p.w_ih.shape[1];
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    for t in 0..x.nrows() {
        let mut pre = vec![0.0; 4 * h];
        for (r, v) in pre.iter_mut().enumerate() {
            let mut acc = p.bias.data[r];
            for c in 0..c_in {
                acc += p.w_ih.data[r * c_in + c] * x[[t, c]];
            }
            for k in 0..h {
                acc += p.w_hh.data[r * h + k] * hs[k];
            }
            *v = acc;
        }
        for u in 0..h {
            let i = sigmoid(pre[u]);
            let f = sigmoid(pre[h + u]);
            let g = pre[2 * h + u].tanh();
            let o = sigmoid(pre[3 * h + u]);
            cs[u] = f * cs[u] + i * g;
            hs[u] = o * cs[u].tanh();
        }
    }
    hs
}

pub fn naive_mlp(p: &MlpParams<f64>, x: &Array2<f64>) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for (li, l) in p.layers.iter().enumerate() {
        let (out, inp) = (l.weight.shape[0], l.weight.shape[1]);
        rows = rows
            .iter()
            .map(|r| {
                (0..out)
                    .map(|o| {
                        let mut acc = l.bias.data[o];
                        for i in 0..inp {
                            acc += l.weight.data[o * inp + i] * r[i];
                        }
                        if li + 1 < p.layers.len() {
                            acc.max(0.0)
                        } else {
                            acc
                        }
                    })
                    .collect()
            })
            .collect();
    }
    rows
}

pub fn conv_sweep(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = stream(seed, "conv");
        let cin = rng.random_range(1..5);
        let cout = rng.random_range(1..6);
        let k = rng.random_range(1..9);
        let stride = rng.random_range(1..5);
        let len = k + rng.random_range(0..40);
        let x = rand_matrix(cin, len, &mut rng);
        let w = rand_tensor(&[cout, cin, k], &mut rng);
        let b = rand_tensor(&[cout], &mut rng);
        let fast = conv1d_forward(x.view(), &w, &b, stride);
        let slow = naive_conv(&x, &w, &b, stride);
        assert_eq!(fast.dim(), (slow.len(), slow[0].len()));
        worst = worst.max(max_diff(&fast, &slow));
    }
    worst
}

pub fn group_norm_sweep(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = stream(seed, "gn");
        let groups = rng.random_range(1..5);
        let c = groups * rng.random_range(1..4);
        let t = rng.random_range(1..30);
        let y = rand_matrix(c, t, &mut rng).mapv(|v| 3.0 * v + 0.5);
        let scale: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let shift: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = group_norm_forward(y.view(), groups, &scale, &shift);
        worst = worst.max(max_diff(&fast.out, &naive_group_norm(&y, groups, &scale, &shift)));
    }
    worst
}

pub fn lstm_sweep(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = stream(seed, "lstm");
        let h = rng.random_range(1..7);
        let c = rng.random_range(1..6);
        let steps = rng.random_range(1..15);
        let p = LstmParams {
            w_ih: rand_tensor(&[4 * h, c], &mut rng),
            w_hh: rand_tensor(&[4 * h, h], &mut rng),
            bias: rand_tensor(&[4 * h], &mut rng),
        };
        let x = rand_matrix(steps, c, &mut rng);
        let (fast, _) = lstm_forward(&p, x.view());
        let slow = naive_lstm(&p, &x);
        worst = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    worst
}

pub fn mlp_sweep(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = stream(seed, "mlp");
        let widths: Vec<usize> = (0..4).map(|_| rng.random_range(1..9)).collect();
        let layers = widths
            .windows(2)
            .map(|w| Linear {
                weight: rand_tensor(&[w[1], w[0]], &mut rng),
                bias: rand_tensor(&[w[1]], &mut rng),
            })
            .collect();
        let p = MlpParams { layers };
        let x = rand_matrix(rng.random_range(1..6), widths[0], &mut rng);
        let (fast, _) = mlp_forward(&p, x.view()).unwrap();
        worst = worst.max(max_diff(&fast, &naive_mlp(&p, &x)));
    }
    worst
}

/// The whole encoder against the composed loops.
pub fn encoder_sweep(instances: u64) -> f64 {
    let cfg = ModelConfig {
        conv_channels: 4,
        latent_dim: 3,
        groupnorm_groups: 2,
        regressor_hidden: vec![4, 4],
        discriminator_hidden: vec![4, 4],
        ..ModelConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = stream(seed, "encoder");
        let params: ModelParams<f64> = init_params(&cfg, &mut rng);
        let len = cfg.min_input_len() + rng.random_range(0..200);
        let wave: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = encoder_forward(&params.encoder, &cfg, &[wave.clone()]).unwrap();

        let mut x = Array2::from_shape_vec((1, len), wave).unwrap();
        for (layer, &stride) in params.encoder.conv.iter().zip(&cfg.strides) {
            let y = naive_conv(&x, &layer.weight, &layer.bias, stride);
            let y = Array2::from_shape_fn((y.len(), y[0].len()), |(i, j)| y[i][j]);
            let n = naive_group_norm(&y, cfg.groupnorm_groups, &layer.norm_scale.data, &layer.norm_shift.data);
            x = Array2::from_shape_fn((n.len(), n[0].len()), |(i, j)| n[i][j].max(0.0));
        }
        let h = naive_lstm(&params.encoder.lstm, &x.t().to_owned());
        worst = z.row(0).iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    worst
}
