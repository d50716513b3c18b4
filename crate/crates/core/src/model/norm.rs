//! Group normalization over `(channels, frames)` activations of one sample.

use ndarray::{Array2, ArrayView2};

use crate::scalar::Scalar;

/// Added to the variance before the square root.
pub const GN_EPS: f64 = 1e-5;

pub struct GroupNormOutput<T> {
    /// Affine output `xhat * scale + shift`.
    pub out: Array2<T>,
    /// Normalized activations before the affine transform.
    pub xhat: Array2<T>,
    /// `1 / sqrt(var + eps)` per group.
    pub rstd: Vec<T>,
}

pub fn group_norm_forward<T: Scalar>(
    y: ArrayView2<T>,
    groups: usize,
    scale: &[T],
    shift: &[T],
) -> GroupNormOutput<T> {
    let (channels, frames) = y.dim();
    let per = channels / groups;
    let n = (per * frames) as f64;
    let mut xhat = Array2::<T>::zeros((channels, frames));
    let mut out = Array2::<T>::zeros((channels, frames));
    let mut rstd = Vec::with_capacity(groups);
    for g in 0..groups {
        let chans = g * per..(g + 1) * per;
        let mut sum = 0.0;
        for c in chans.clone() {
            sum += y.row(c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for c in chans.clone() {
            sq += y
                .row(c)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>();
        }
        let r = 1.0 / (sq / n + GN_EPS).sqrt();
        let (mean_t, r_t) = (T::of(mean), T::of(r));
        for c in chans {
            let (s, b) = (scale[c], shift[c]);
            for ((xh, o), &v) in xhat
                .row_mut(c)
                .iter_mut()
                .zip(out.row_mut(c).iter_mut())
                .zip(y.row(c))
            {
                *xh = (v - mean_t) * r_t;
                *o = *xh * s + b;
            }
        }
        rstd.push(r_t);
    }
    GroupNormOutput { out, xhat, rstd }
}

/// Returns the input gradient and accumulates into `dscale`/`dshift`.
pub fn group_norm_backward<T: Scalar>(
    dout: ArrayView2<T>,
    xhat: ArrayView2<T>,
    rstd: &[T],
    scale: &[T],
    dscale: &mut [T],
    dshift: &mut [T],
) -> Array2<T> {
    let (channels, frames) = dout.dim();
    let groups = rstd.len();
    let per = channels / groups;
    let n = (per * frames) as f64;
    let mut dy = Array2::<T>::zeros((channels, frames));
    for g in 0..groups {
        let chans = g * per..(g + 1) * per;
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in chans.clone() {
            let mut ds = 0.0;
            let mut db = 0.0;
            for (&d, &xh) in dout.row(c).iter().zip(xhat.row(c)) {
                let (d, xh) = (d.as_f64(), xh.as_f64());
                ds += d * xh;
                db += d;
            }
            dscale[c] = dscale[c] + T::of(ds);
            dshift[c] = dshift[c] + T::of(db);
            let s = scale[c].as_f64();
            mean_dxhat += db * s;
            mean_dxhat_xhat += ds * s;
        }
        let m1 = T::of(mean_dxhat / n);
        let m2 = T::of(mean_dxhat_xhat / n);
        let r = rstd[g];
        for c in chans {
            let s = scale[c];
            for ((o, &d), &xh) in dy.row_mut(c).iter_mut().zip(dout.row(c)).zip(xhat.row(c)) {
                *o = r * (d * s - m1 - xh * m2);
            }
        }
    }
    dy
}
