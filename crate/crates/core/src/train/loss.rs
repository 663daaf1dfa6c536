//! Loss components and training schedules.
//!
//! All losses are reported as means, not sums, so magnitudes are batch-size
//! invariant; the default weights are calibrated accordingly.

use crate::model::Real;

/// Interval weight w = 1 / cos(delta / window * pi / 2), with delta clamped
/// to window - 1 so the weight stays finite at the window boundary.
pub fn pair_weight(delta: usize, window: usize) -> f64 {
    let window = window.max(1);
    let d = delta.min(window.saturating_sub(1)) as f64;
    1.0 / (d / window as f64 * std::f64::consts::FRAC_PI_2).cos()
}

/// Photometric weight schedule: 0 at step 0, linear to `max` over
/// `ramp_steps`, then flat.
pub fn lambda_pho(step: usize, max: f64, ramp_steps: usize) -> f64 {
    if ramp_steps == 0 {
        return max;
    }
    max * (step as f64 / ramp_steps as f64).min(1.0)
}

/// Curriculum window: initial + 1 per `grow_every` steps, capped at n - 1.
pub fn window_size(step: usize, initial: usize, grow_every: usize, n_frames: usize) -> usize {
    let grown = initial + if grow_every == 0 { 0 } else { step / grow_every };
    grown.min(n_frames.saturating_sub(1)).max(1)
}

/// Learning-rate decay: factor^(step / every).
pub fn lr_decay(step: usize, every: usize, factor: f64) -> f64 {
    if every == 0 {
        return 1.0;
    }
    factor.powi((step / every) as i32)
}

/// Weighted mean of per-correspondence L1 flow errors. `predicted` and
/// `supervised` are displacement pairs; `weights` are per-correspondence.
pub fn loss_flow<R: Real>(predicted: &[[R; 2]], supervised: &[[R; 2]], weights: &[f64]) -> f64 {
    debug_assert_eq!(predicted.len(), supervised.len());
    debug_assert_eq!(predicted.len(), weights.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for ((p, s), &w) in predicted.iter().zip(supervised).zip(weights) {
        let l1 = (p[0] - s[0]).abs().to_f64_() + (p[1] - s[1]).abs().to_f64_();
        num += w * l1;
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mean squared color error (summed over channels, averaged over pixels).
pub fn loss_photometric<R: Real>(predicted: &[[R; 3]], observed: &[[R; 3]]) -> f64 {
    debug_assert_eq!(predicted.len(), observed.len());
    if predicted.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (p, o) in predicted.iter().zip(observed) {
        for c in 0..3 {
            let d = (p[c] - o[c]).to_f64_();
            sum += d * d;
        }
    }
    sum / predicted.len() as f64
}

/// Mean L1 norm of the discrete acceleration x_next + x_prev - 2 x.
pub fn loss_regularization<R: Real>(
    x_prev: &[[R; 3]],
    x: &[[R; 3]],
    x_next: &[[R; 3]],
) -> f64 {
    debug_assert_eq!(x_prev.len(), x.len());
    debug_assert_eq!(x_next.len(), x.len());
    if x.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..x.len() {
        for c in 0..3 {
            sum += (x_next[k][c] + x_prev[k][c] - R::c(2.0) * x[k][c])
                .abs()
                .to_f64_();
        }
    }
    sum / x.len() as f64
}

/// Mean L1 mismatch of value differences at random pixel pairs; applied to
/// colors and, with the same functional, to flows.
pub fn loss_gradient_pairs<R: Real, const D: usize>(
    predicted: &[[R; D]],
    observed: &[[R; D]],
    index_pairs: &[(usize, usize)],
) -> f64 {
    if index_pairs.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &(a, b) in index_pairs {
        for c in 0..D {
            let pd = predicted[a][c] - predicted[b][c];
            let od = observed[a][c] - observed[b][c];
            sum += (pd - od).abs().to_f64_();
        }
    }
    sum / index_pairs.len() as f64
}

/// Hinge penalty keeping mapped depths inside [near, far].
pub fn loss_depth_range<R: Real>(z: &[R], near: f64, far: f64) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &v in z {
        let v = v.to_f64_();
        sum += (v - far).max(0.0) + (near - v).max(0.0);
    }
    sum / z.len() as f64
}

/// Loss components and their weighted combination.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub flow: f64,
    pub pho: f64,
    pub reg: f64,
    pub pgrad: f64,
    pub zrange: f64,
    pub total: f64,
}

pub fn total_loss(
    flow: f64,
    pho: f64,
    reg: f64,
    pgrad: f64,
    zrange: f64,
    lambda_pho: f64,
    lambda_reg: f64,
    lambda_pgrad: f64,
    lambda_zrange: f64,
) -> LossBreakdown {
    LossBreakdown {
        flow,
        pho,
        reg,
        pgrad,
        zrange,
        total: flow
            + lambda_pho * pho
            + lambda_reg * reg
            + lambda_pgrad * pgrad
            + lambda_zrange * zrange,
    }
}
