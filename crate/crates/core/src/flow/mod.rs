//! Pairwise flow collection and consolidation into the supervision set:
//! cycle/appearance filtering, occlusion rescue, optional chaining.

pub mod cache;
pub mod chain;
pub mod features;
pub mod filter;
pub mod pipeline;
pub mod provider;

use std::collections::HashMap;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub use features::{ColorPatchFeatures, FeatureProvider};
pub use filter::{appearance_filter, cycle_filter, occlusion_rescue};
pub use pipeline::{collect_pairwise_flows, ingest, IngestConfig, IngestStats};
pub use provider::{FlowProvider, ImportProvider};

/// Dense displacement field between an ordered frame pair, in pixels.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub source_index: usize,
    pub target_index: usize,
    /// H x W x 2 per-pixel (dx, dy).
    pub vectors: Array3<f32>,
    pub valid_mask: Array2<bool>,
}

impl FlowField {
    pub fn new(
        source_index: usize,
        target_index: usize,
        vectors: Array3<f32>,
        valid_mask: Array2<bool>,
    ) -> Result<Self> {
        if source_index == target_index {
            return Err(Error::PairMismatch(format!(
                "flow source == target ({source_index})"
            )));
        }
        let (h, w, c) = vectors.dim();
        if c != 2 {
            return Err(Error::Dimension(format!("flow needs 2 channels, got {c}")));
        }
        if valid_mask.dim() != (h, w) {
            return Err(Error::Dimension("mask/vector shape mismatch".into()));
        }
        for ((y, x), &m) in valid_mask.indexed_iter() {
            if m && (!vectors[(y, x, 0)].is_finite() || !vectors[(y, x, 1)].is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite flow vector at valid pixel ({x}, {y})"
                )));
            }
        }
        Ok(FlowField {
            source_index,
            target_index,
            vectors,
            valid_mask,
        })
    }

    pub fn width(&self) -> usize {
        self.vectors.dim().1
    }

    pub fn height(&self) -> usize {
        self.vectors.dim().0
    }

    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        [self.vectors[(y, x, 0)], self.vectors[(y, x, 1)]]
    }

    /// Bilinear flow lookup at continuous pixel coordinates, requiring all
    /// four footprint pixels to be valid.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f32; 2]> {
        if !crate::video::footprint_valid(&self.valid_mask, x, y) {
            return None;
        }
        crate::video::bilinear2(&self.vectors, x, y)
    }
}

/// Per-pixel feature vectors for one frame (H x W x D).
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub frame_index: usize,
    pub features: Array3<f32>,
}

impl FeatureMap {
    pub fn new(frame_index: usize, features: Array3<f32>) -> Result<Self> {
        let (h, w, d) = features.dim();
        for y in 0..h {
            for x in 0..w {
                let norm: f32 = (0..d).map(|c| features[(y, x, c)].powi(2)).sum();
                if norm <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "zero-norm feature at ({x}, {y})"
                    )));
                }
            }
        }
        Ok(FeatureMap {
            frame_index,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.dim().2
    }

    /// Bilinear feature lookup at continuous pixel coordinates.
    pub fn sample(&self, x: f64, y: f64) -> Option<Vec<f32>> {
        let (h, w, d) = self.features.dim();
        if !crate::video::in_bounds(x, y, w, h) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let mut out = vec![0.0f32; d];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.features[(y0, x0, c)] * (1.0 - fx) * (1.0 - fy)
                + self.features[(y0, x1, c)] * fx * (1.0 - fy)
                + self.features[(y1, x0, c)] * (1.0 - fx) * fy
                + self.features[(y1, x1, c)] * fx * fy;
        }
        Some(out)
    }
}

/// One supervising correspondence: integer source pixel, continuous target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrEntry {
    pub p_i: [u16; 2],
    pub p_j: [f32; 2],
    pub occlusion_rescued: bool,
    pub chained: bool,
}

/// All surviving correspondences of one ordered frame pair.
#[derive(Debug, Clone)]
pub struct PairEntries {
    pub i: usize,
    pub j: usize,
    pub entries: Vec<CorrEntry>,
}

/// The supervision set Omega_f: filtered, flagged correspondences with a
/// per-pair index for batch sampling.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub pairs: Vec<PairEntries>,
    index: HashMap<(usize, usize), usize>,
}

impl CorrespondenceSet {
    pub fn new(width: usize, height: usize, n_frames: usize) -> Self {
        CorrespondenceSet {
            width,
            height,
            n_frames,
            pairs: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push_pair(&mut self, pair: PairEntries) {
        debug_assert!(!self.index.contains_key(&(pair.i, pair.j)));
        self.index.insert((pair.i, pair.j), self.pairs.len());
        self.pairs.push(pair);
    }

    pub fn pair(&self, i: usize, j: usize) -> Option<&PairEntries> {
        self.index.get(&(i, j)).map(|&k| &self.pairs[k])
    }

    pub fn total_entries(&self) -> usize {
        self.pairs.iter().map(|p| p.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_entries() == 0
    }

    /// Serialize into the named-array container format.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "omnitrack-correspondences",
            "width": self.width,
            "height": self.height,
            "frames": self.n_frames,
        });
        let mut c = crate::container::Container::new(meta);
        for p in &self.pairs {
            let n = p.entries.len();
            let mut pi = Vec::with_capacity(n * 2);
            let mut pj = Vec::with_capacity(n * 2);
            let mut flags = Vec::with_capacity(n);
            for e in &p.entries {
                pi.push(e.p_i[0]);
                pi.push(e.p_i[1]);
                pj.push(e.p_j[0]);
                pj.push(e.p_j[1]);
                flags.push(e.occlusion_rescued as u8 | ((e.chained as u8) << 1));
            }
            let key = format!("pair.{:05}.{:05}", p.i, p.j);
            c.insert_u16(format!("{key}.pi"), &[n, 2], &pi);
            c.insert_f32(format!("{key}.pj"), &[n, 2], &pj);
            c.insert_u8(format!("{key}.flags"), &[n], &flags);
        }
        c.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let c = crate::container::Container::load(path)?;
        if c.meta["kind"] != "omnitrack-correspondences" {
            return Err(Error::format(path, "not a correspondence set"));
        }
        let mut set = CorrespondenceSet::new(
            c.meta["width"].as_u64().unwrap_or(0) as usize,
            c.meta["height"].as_u64().unwrap_or(0) as usize,
            c.meta["frames"].as_u64().unwrap_or(0) as usize,
        );
        for name in c.names() {
            if let Some(rest) = name.strip_prefix("pair.") {
                if let Some(key) = rest.strip_suffix(".pi") {
                    let mut it = key.split('.');
                    let i: usize = it.next().unwrap().parse().map_err(|_| {
                        Error::format(path, format!("bad pair key {key}"))
                    })?;
                    let j: usize = it.next().unwrap().parse().map_err(|_| {
                        Error::format(path, format!("bad pair key {key}"))
                    })?;
                    let pi = c.get(name).unwrap().as_u16()?;
                    let pj = c
                        .get(&format!("pair.{key}.pj"))
                        .ok_or_else(|| Error::format(path, "missing pj"))?
                        .as_f32()?;
                    let flags = c
                        .get(&format!("pair.{key}.flags"))
                        .ok_or_else(|| Error::format(path, "missing flags"))?
                        .as_u8()?;
                    let entries = (0..flags.len())
                        .map(|k| CorrEntry {
                            p_i: [pi[2 * k], pi[2 * k + 1]],
                            p_j: [pj[2 * k], pj[2 * k + 1]],
                            occlusion_rescued: flags[k] & 1 != 0,
                            chained: flags[k] & 2 != 0,
                        })
                        .collect();
                    set.push_pair(PairEntries { i, j, entries });
                }
            }
        }
        Ok(set)
    }
}
