//! Chaining reliable filtered flows into additional long-range
//! correspondences.

use ndarray::Array2;

use super::FlowField;
use crate::error::{Error, Result};
use crate::video::{footprint_valid, in_bounds};

/// A chained correspondence: integer source pixel, continuous target.
#[derive(Debug, Clone, Copy)]
pub struct ChainedEntry {
    pub p_i: [u16; 2],
    pub p_j: [f32; 2],
}

/// Compose two filtered hops i->m and m->j into i->j correspondences.
///
/// A chained entry is emitted only when the first hop survived filtering at
/// the source pixel, every bilinear footprint pixel of the second hop at the
/// intermediate landing point survived filtering, and both landing points
/// stay in bounds.
pub fn chain_pair(
    flow_im: &FlowField,
    keep_im: &Array2<bool>,
    flow_mj: &FlowField,
    keep_mj: &Array2<bool>,
) -> Result<Vec<ChainedEntry>> {
    if flow_im.target_index != flow_mj.source_index {
        return Err(Error::PairMismatch(format!(
            "hops do not connect: {}->{} then {}->{}",
            flow_im.source_index, flow_im.target_index, flow_mj.source_index, flow_mj.target_index
        )));
    }
    let (h, w) = (flow_im.height(), flow_im.width());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !keep_im[(y, x)] {
                continue;
            }
            let f1 = flow_im.at(x, y);
            let mx = x as f64 + f1[0] as f64;
            let my = y as f64 + f1[1] as f64;
            if !in_bounds(mx, my, w, h) || !footprint_valid(keep_mj, mx, my) {
                continue;
            }
            let Some(f2) = flow_mj.sample(mx, my) else {
                continue;
            };
            let jx = mx + f2[0] as f64;
            let jy = my + f2[1] as f64;
            if !in_bounds(jx, jy, w, h) {
                continue;
            }
            out.push(ChainedEntry {
                p_i: [x as u16, y as u16],
                p_j: [jx as f32, jy as f32],
            });
        }
    }
    Ok(out)
}
