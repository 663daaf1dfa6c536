//! Correspondence filters: forward-backward cycle consistency, appearance
//! consistency, and the two-pass occlusion rescue.

use ndarray::Array2;

use super::{FeatureMap, FlowField};
use crate::error::{Error, Result};
use crate::video::in_bounds;

pub const DEFAULT_CYCLE_THRESHOLD: f32 = 3.0;
pub const DEFAULT_APPEARANCE_THRESHOLD: f32 = 0.5;
/// Appearance check applies only when frames are more than this far apart.
pub const APPEARANCE_MIN_GAP: usize = 8;
/// Rescue applies only to pairs closer than this.
pub const RESCUE_MAX_GAP: usize = 3;

fn check_pair(forward: &FlowField, backward: &FlowField) -> Result<()> {
    if forward.source_index != backward.target_index
        || forward.target_index != backward.source_index
    {
        return Err(Error::PairMismatch(format!(
            "forward ({}->{}) and backward ({}->{}) are not a cycle",
            forward.source_index,
            forward.target_index,
            backward.source_index,
            backward.target_index
        )));
    }
    if forward.vectors.dim() != backward.vectors.dim() {
        return Err(Error::Resolution {
            expected: (forward.height(), forward.width()),
            got: (backward.height(), backward.width()),
        });
    }
    Ok(())
}

/// Cycle-consistency error at one source pixel: the norm of the forward
/// displacement plus the backward displacement sampled at the landing point.
/// None when the landing point leaves the image or the backward field is
/// invalid there.
pub fn cycle_error(forward: &FlowField, backward: &FlowField, x: usize, y: usize) -> Option<f32> {
    if !forward.valid_mask[(y, x)] {
        return None;
    }
    let f = forward.at(x, y);
    let tx = x as f64 + f[0] as f64;
    let ty = y as f64 + f[1] as f64;
    if !in_bounds(tx, ty, forward.width(), forward.height()) {
        return None;
    }
    let b = backward.sample(tx, ty)?;
    Some(((f[0] + b[0]).powi(2) + (f[1] + b[1]).powi(2)).sqrt())
}

/// Keep a pixel iff its forward-backward cycle error is within `threshold`
/// (boundary kept). Pixels whose forward target leaves the image are dropped.
pub fn cycle_filter(
    forward: &FlowField,
    backward: &FlowField,
    threshold: f32,
) -> Result<Array2<bool>> {
    check_pair(forward, backward)?;
    let (h, w) = (forward.height(), forward.width());
    let mut keep = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if let Some(err) = cycle_error(forward, backward, x, y) {
                keep[(y, x)] = err <= threshold;
            }
        }
    }
    Ok(keep)
}

/// Keep a pixel iff the cosine similarity between its source feature and the
/// bilinearly sampled target feature is at least `threshold`. Whether the
/// check applies at all (only for pairs more than 8 frames apart) is the
/// pipeline's decision.
pub fn appearance_filter(
    feat_i: &FeatureMap,
    feat_j: &FeatureMap,
    flow: &FlowField,
    threshold: f32,
) -> Result<Array2<bool>> {
    if feat_i.dim() != feat_j.dim() {
        return Err(Error::Dimension(format!(
            "feature dims differ: {} vs {}",
            feat_i.dim(),
            feat_j.dim()
        )));
    }
    let (h, w, d) = feat_i.features.dim();
    if (flow.height(), flow.width()) != (h, w) {
        return Err(Error::Resolution {
            expected: (h, w),
            got: (flow.height(), flow.width()),
        });
    }
    let mut keep = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if !flow.valid_mask[(y, x)] {
                continue;
            }
            let f = flow.at(x, y);
            let tx = x as f64 + f[0] as f64;
            let ty = y as f64 + f[1] as f64;
            let Some(fj) = feat_j.sample(tx, ty) else {
                continue;
            };
            let mut dot = 0.0f32;
            let mut na = 0.0f32;
            let mut nb = 0.0f32;
            for c in 0..d {
                let a = feat_i.features[(y, x, c)];
                let b = fj[c];
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            let denom = (na.sqrt() * nb.sqrt()).max(1e-12);
            keep[(y, x)] = dot / denom >= threshold;
        }
    }
    Ok(keep)
}

/// Two-pass cycle check for occluded regions. flow_a is i->j, flow_b is
/// j->i, flow_c is the forward flow re-evaluated at the round-trip landing
/// point. A pixel is rescued iff the standard (a, b) check fails but the
/// secondary (b, c) check passes, and only for pairs less than
/// `RESCUE_MAX_GAP` frames apart.
pub fn occlusion_rescue(
    flow_a: &FlowField,
    flow_b: &FlowField,
    flow_c: &FlowField,
    frame_gap: usize,
    threshold: f32,
) -> Result<Array2<bool>> {
    check_pair(flow_a, flow_b)?;
    if flow_c.source_index != flow_a.source_index
        || flow_c.target_index != flow_a.target_index
    {
        return Err(Error::PairMismatch(
            "secondary forward flow must match the primary pair".into(),
        ));
    }
    let (h, w) = (flow_a.height(), flow_a.width());
    let mut rescued = Array2::from_elem((h, w), false);
    if frame_gap >= RESCUE_MAX_GAP {
        return Ok(rescued);
    }
    for y in 0..h {
        for x in 0..w {
            if !flow_a.valid_mask[(y, x)] {
                continue;
            }
            match cycle_error(flow_a, flow_b, x, y) {
                Some(err) if err <= threshold => continue, // standard path keeps it
                _ => {}
            }
            // secondary check starting at the landing point q in frame j
            let a = flow_a.at(x, y);
            let qx = x as f64 + a[0] as f64;
            let qy = y as f64 + a[1] as f64;
            if !in_bounds(qx, qy, w, h) {
                continue;
            }
            let Some(b) = flow_b.sample(qx, qy) else {
                continue;
            };
            let rx = qx + b[0] as f64;
            let ry = qy + b[1] as f64;
            if !in_bounds(rx, ry, w, h) {
                continue;
            }
            let Some(c) = flow_c.sample(rx, ry) else {
                continue;
            };
            let err2 = ((b[0] + c[0]).powi(2) + (b[1] + c[1]).powi(2)).sqrt();
            rescued[(y, x)] = err2 <= threshold;
        }
    }
    Ok(rescued)
}
