//! Sinusoidal positional encoding.
//!
//! A d-dimensional point maps to d*(2n+1) values: the raw coordinates
//! followed, per frequency 2^f * pi (f = 0..n), by sin and cos blocks.

use ndarray::{s, Array2};

use super::params::Real;

pub fn encoded_dim(d: usize, n_freq: usize) -> usize {
    d * (2 * n_freq + 1)
}

/// Encode an N x d batch; n_freq = 0 is the identity passthrough.
pub fn positional_encode<R: Real>(x: &Array2<R>, n_freq: usize) -> Array2<R> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, encoded_dim(d, n_freq)));
    out.slice_mut(s![.., 0..d]).assign(x);
    for f in 0..n_freq {
        let w = R::c((1u64 << f) as f64 * std::f64::consts::PI);
        let scaled = x.mapv(|v| v * w);
        let base = d * (1 + 2 * f);
        out.slice_mut(s![.., base..base + d])
            .assign(&scaled.mapv(|v| v.sin()));
        out.slice_mut(s![.., base + d..base + 2 * d])
            .assign(&scaled.mapv(|v| v.cos()));
    }
    out
}

/// Backward pass: gradient w.r.t. the raw coordinates.
pub fn positional_encode_backward<R: Real>(
    x: &Array2<R>,
    gy: &Array2<R>,
    n_freq: usize,
) -> Array2<R> {
    let (n, d) = x.dim();
    debug_assert_eq!(gy.dim(), (n, encoded_dim(d, n_freq)));
    let mut gx = gy.slice(s![.., 0..d]).to_owned();
    for f in 0..n_freq {
        let w = R::c((1u64 << f) as f64 * std::f64::consts::PI);
        let base = d * (1 + 2 * f);
        let g_sin = gy.slice(s![.., base..base + d]);
        let g_cos = gy.slice(s![.., base + d..base + 2 * d]);
        for r in 0..n {
            for c in 0..d {
                let arg = x[(r, c)] * w;
                gx[(r, c)] = gx[(r, c)] + w * (g_sin[(r, c)] * arg.cos() - g_cos[(r, c)] * arg.sin());
            }
        }
    }
    gx
}
