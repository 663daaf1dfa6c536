//! Synthetic layered-sprite scenes with exact ground truth: frames, flows,
//! trajectories, and occlusion flags, all derived from the same motion
//! programs so they are mutually consistent by construction.

pub mod provider;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GroundTruthTrack;
use crate::video::VideoSequence;

pub use provider::{CorruptMode, NoiseModel, OracleFlowProvider};

/// Piecewise-linear motion through waypoints, or constant velocity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionProgram {
    Constant { start: [f64; 2], velocity: [f64; 2] },
    Waypoints { points: Vec<(f64, [f64; 2])> },
}

impl MotionProgram {
    pub fn position(&self, t: f64) -> [f64; 2] {
        match self {
            MotionProgram::Constant { start, velocity } => {
                [start[0] + velocity[0] * t, start[1] + velocity[1] * t]
            }
            MotionProgram::Waypoints { points } => {
                assert!(!points.is_empty(), "empty waypoint program");
                if t <= points[0].0 {
                    return points[0].1;
                }
                for w in points.windows(2) {
                    let (t0, p0) = w[0];
                    let (t1, p1) = w[1];
                    if t <= t1 {
                        let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                        return [p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])];
                    }
                }
                points.last().unwrap().1
            }
        }
    }

    pub fn still() -> Self {
        MotionProgram::Constant {
            start: [0.0, 0.0],
            velocity: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpriteSpec {
    /// Texture size (width, height) in pixels.
    pub size: [usize; 2],
    /// Depth layer; strictly smaller = nearer. Must be distinct per sprite
    /// and smaller than the background's implicit depth.
    pub depth: f64,
    pub texture_seed: u64,
    pub motion: MotionProgram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background_texture_seed: u64,
    /// Background translation per frame, in pixels.
    pub background_velocity: [f64; 2],
    /// Global camera translation program, added to every layer.
    pub camera: MotionProgram,
    pub sprites: Vec<SpriteSpec>,
    pub noise: NoiseModel,
    pub tracks_per_sprite: usize,
    pub background_tracks: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            frames: 12,
            background_texture_seed: 1,
            background_velocity: [0.0, 0.0],
            camera: MotionProgram::still(),
            sprites: Vec::new(),
            noise: NoiseModel::default(),
            tracks_per_sprite: 9,
            background_tracks: 12,
        }
    }
}

impl SceneSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("scene spec serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One rendered layer: texture plus its per-frame position (origin of texel
/// (0,0) in image coordinates). Index 0 is always the background.
#[derive(Debug, Clone)]
pub struct LayerData {
    pub texture: Array3<f32>,
    pub positions: Vec<[f64; 2]>,
    pub depth: f64,
}

impl LayerData {
    /// Whether the layer covers continuous image point q at frame t
    /// (nearest-texel coverage).
    pub fn covers(&self, q: [f64; 2], t: usize) -> bool {
        let (th, tw, _) = self.texture.dim();
        let lx = q[0] - self.positions[t][0];
        let ly = q[1] - self.positions[t][1];
        lx >= -0.5 && lx < tw as f64 - 0.5 && ly >= -0.5 && ly < th as f64 - 0.5
    }

    pub fn texel(&self, q: [f64; 2], t: usize) -> Option<[f32; 3]> {
        if !self.covers(q, t) {
            return None;
        }
        let lx = (q[0] - self.positions[t][0] + 0.5).floor() as usize;
        let ly = (q[1] - self.positions[t][1] + 0.5).floor() as usize;
        Some([
            self.texture[(ly, lx, 0)],
            self.texture[(ly, lx, 1)],
            self.texture[(ly, lx, 2)],
        ])
    }

    /// Exact displacement of this layer between frames i and j.
    pub fn displacement(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.positions[j][0] - self.positions[i][0],
            self.positions[j][1] - self.positions[i][1],
        ]
    }
}

/// A ground-truth anchor: (layer, offset of the point inside the layer).
#[derive(Debug, Clone, Copy)]
pub struct TrackAnchor {
    pub layer: usize,
    pub offset: [f64; 2],
}

/// Everything the harness needs: frames, layers, per-frame layer maps,
/// ground-truth tracks with occlusion, and exact flows on demand.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub spec: SceneSpec,
    pub video: VideoSequence,
    pub layers: Vec<LayerData>,
    /// Index of the topmost (nearest) covering layer per pixel per frame.
    pub layer_maps: Vec<Array2<u8>>,
    pub anchors: Vec<TrackAnchor>,
    pub tracks: Vec<GroundTruthTrack>,
}

/// Seeded colored noise smoothed once; photometric texture for the color
/// loss to exploit.
pub fn noise_texture(seed: u64, height: usize, width: usize, tint: [f32; 3]) -> Array3<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Array3::<f32>::from_shape_fn((height, width, 3), |_| rng.gen_range(0.0..1.0));
    let mut out = Array3::<f32>::zeros((height, width, 3));
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut sum = 0.0;
                let mut n = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < height as i64 && xx >= 0 && xx < width as i64 {
                            sum += raw[(yy as usize, xx as usize, c)];
                            n += 1.0;
                        }
                    }
                }
                out[(y, x, c)] = (0.1 + 0.8 * (sum / n)) * tint[c];
            }
        }
    }
    out
}

/// Build the scene: render frames, derive layer maps and ground-truth
/// tracks. Deterministic given the spec.
pub fn make_scene(spec: &SceneSpec) -> Result<SyntheticBundle> {
    if spec.frames < 3 {
        return Err(Error::SceneSpec("frame count must be at least 3".into()));
    }
    if spec.width < 4 || spec.height < 4 {
        return Err(Error::SceneSpec("resolution too small".into()));
    }
    {
        let mut depths: Vec<f64> = spec.sprites.iter().map(|s| s.depth).collect();
        depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if depths.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SceneSpec("sprite depth layers must be distinct".into()));
        }
    }

    let n = spec.frames;
    let cam: Vec<[f64; 2]> = (0..n).map(|t| spec.camera.position(t as f64)).collect();

    // background: auto-sized texture guaranteeing full coverage
    let bg_drift: Vec<[f64; 2]> = (0..n)
        .map(|t| {
            [
                spec.background_velocity[0] * t as f64 + cam[t][0],
                spec.background_velocity[1] * t as f64 + cam[t][1],
            ]
        })
        .collect();
    let (min_dx, max_dx) = bg_drift
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d[0]), hi.max(d[0]))
        });
    let (min_dy, max_dy) = bg_drift
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d[1]), hi.max(d[1]))
        });
    let tw = spec.width + (max_dx - min_dx).ceil() as usize + 2;
    let th = spec.height + (max_dy - min_dy).ceil() as usize + 2;
    let bg_positions: Vec<[f64; 2]> = bg_drift
        .iter()
        .map(|d| [d[0] - max_dx - 1.0, d[1] - max_dy - 1.0])
        .collect();
    let background = LayerData {
        texture: noise_texture(spec.background_texture_seed, th, tw, [1.0, 1.0, 1.0]),
        positions: bg_positions,
        depth: f64::INFINITY,
    };

    let mut layers = vec![background];
    let tints = [
        [1.0, 0.7, 0.7],
        [0.7, 1.0, 0.7],
        [0.7, 0.7, 1.0],
        [1.0, 1.0, 0.6],
        [1.0, 0.6, 1.0],
        [0.6, 1.0, 1.0],
    ];
    for (k, s) in spec.sprites.iter().enumerate() {
        if s.depth.is_infinite() {
            return Err(Error::SceneSpec("sprite depth must be finite".into()));
        }
        let positions: Vec<[f64; 2]> = (0..n)
            .map(|t| {
                let p = s.motion.position(t as f64);
                [p[0] + cam[t][0], p[1] + cam[t][1]]
            })
            .collect();
        // sprite must stay fully inside the frame at all times
        for (t, p) in positions.iter().enumerate() {
            if p[0] < 0.0
                || p[1] < 0.0
                || p[0] + (s.size[0] - 1) as f64 > (spec.width - 1) as f64
                || p[1] + (s.size[1] - 1) as f64 > (spec.height - 1) as f64
            {
                return Err(Error::SceneSpec(format!(
                    "sprite {k} leaves the frame at t = {t} (pos {:?})",
                    p
                )));
            }
        }
        layers.push(LayerData {
            texture: noise_texture(s.texture_seed, s.size[1], s.size[0], tints[k % tints.len()]),
            positions,
            depth: s.depth,
        });
    }

    // render frames and layer maps (topmost = smallest depth)
    let mut frames = Vec::with_capacity(n);
    let mut layer_maps = Vec::with_capacity(n);
    for t in 0..n {
        let mut img = Array3::<f32>::zeros((spec.height, spec.width, 3));
        let mut map = Array2::<u8>::zeros((spec.height, spec.width));
        for y in 0..spec.height {
            for x in 0..spec.width {
                let q = [x as f64, y as f64];
                let mut best: Option<(f64, usize)> = None;
                for (li, layer) in layers.iter().enumerate() {
                    if layer.covers(q, t) {
                        match best {
                            Some((d, _)) if layer.depth >= d => {}
                            _ => best = Some((layer.depth, li)),
                        }
                    }
                }
                let (_, li) = best.ok_or_else(|| {
                    Error::SceneSpec(format!("pixel ({x}, {y}) uncovered at t = {t}"))
                })?;
                let c = layers[li].texel(q, t).expect("covering layer has texel");
                img[(y, x, 0)] = c[0];
                img[(y, x, 1)] = c[1];
                img[(y, x, 2)] = c[2];
                map[(y, x)] = li as u8;
            }
        }
        frames.push(img);
        layer_maps.push(map);
    }
    let video = VideoSequence::new(frames)?;

    // ground-truth anchors: a grid over each sprite, plus background points
    // that stay in frame for the whole video
    let mut anchors = Vec::new();
    for (li, layer) in layers.iter().enumerate().skip(1) {
        let (th, tw, _) = layer.texture.dim();
        let side = (spec.tracks_per_sprite as f64).sqrt().round().max(1.0) as usize;
        for gy in 0..side {
            for gx in 0..side {
                let ox = (gx as f64 + 0.5) / side as f64 * (tw - 1) as f64;
                let oy = (gy as f64 + 0.5) / side as f64 * (th - 1) as f64;
                anchors.push(TrackAnchor {
                    layer: li,
                    offset: [ox, oy],
                });
            }
        }
    }
    {
        let side = (spec.background_tracks as f64).sqrt().ceil().max(1.0) as usize;
        let bg = &layers[0];
        let mut added = 0;
        'grid: for gy in 0..side {
            for gx in 0..side {
                if added >= spec.background_tracks {
                    break 'grid;
                }
                let ix = (gx as f64 + 0.5) / side as f64 * (spec.width - 1) as f64;
                let iy = (gy as f64 + 0.5) / side as f64 * (spec.height - 1) as f64;
                let offset = [ix - bg.positions[0][0], iy - bg.positions[0][1]];
                let in_frame_always = (0..n).all(|t| {
                    let px = bg.positions[t][0] + offset[0];
                    let py = bg.positions[t][1] + offset[1];
                    crate::video::in_bounds(px, py, spec.width, spec.height)
                });
                if in_frame_always {
                    anchors.push(TrackAnchor { layer: 0, offset });
                    added += 1;
                }
            }
        }
    }

    // drop anchors that are never visible (unusable as ground truth)
    let mut tracks = Vec::new();
    let mut kept_anchors = Vec::new();
    for a in anchors {
        let t = track_of(&layers, &a, n);
        if t.occluded.iter().any(|&o| !o) {
            tracks.push(t);
            kept_anchors.push(a);
        }
    }
    let anchors = kept_anchors;

    Ok(SyntheticBundle {
        spec: spec.clone(),
        video,
        layers,
        layer_maps,
        anchors,
        tracks,
    })
}

fn track_of(layers: &[LayerData], anchor: &TrackAnchor, n: usize) -> GroundTruthTrack {
    let layer = &layers[anchor.layer];
    let mut points = Vec::with_capacity(n);
    let mut occluded = Vec::with_capacity(n);
    for t in 0..n {
        let q = [
            layer.positions[t][0] + anchor.offset[0],
            layer.positions[t][1] + anchor.offset[1],
        ];
        let occ = layers
            .iter()
            .enumerate()
            .any(|(li, l)| li != anchor.layer && l.depth < layer.depth && l.covers(q, t));
        points.push(q);
        occluded.push(occ);
    }
    GroundTruthTrack { points, occluded }
}

impl SyntheticBundle {
    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    /// The layer visible at integer pixel p in frame i.
    pub fn layer_at(&self, x: usize, y: usize, t: usize) -> usize {
        self.layer_maps[t][(y, x)] as usize
    }

    /// Exact flow i -> j: each pixel moves with the layer visible at it in
    /// frame i.
    pub fn exact_flow(&self, i: usize, j: usize) -> crate::flow::FlowField {
        let (h, w) = (self.height(), self.width());
        let mut v = Array3::<f32>::zeros((h, w, 2));
        for y in 0..h {
            for x in 0..w {
                let li = self.layer_at(x, y, i);
                let d = self.layers[li].displacement(i, j);
                v[(y, x, 0)] = d[0] as f32;
                v[(y, x, 1)] = d[1] as f32;
            }
        }
        crate::flow::FlowField::new(i, j, v, Array2::from_elem((h, w), true))
            .expect("exact flow is well-formed")
    }

    /// Whether the point carried by `layer` sitting at continuous position q
    /// in frame t is covered by a strictly nearer layer.
    pub fn occluded_at(&self, layer: usize, q: [f64; 2], t: usize) -> bool {
        let depth = self.layers[layer].depth;
        self.layers
            .iter()
            .enumerate()
            .any(|(li, l)| li != layer && l.depth < depth && l.covers(q, t))
    }

    /// Occlusion mask for the correspondence i -> j: pixel p is flagged when
    /// its landing point in frame j is covered by a strictly nearer layer.
    pub fn occlusion_mask(&self, i: usize, j: usize) -> Array2<bool> {
        let (h, w) = (self.height(), self.width());
        Array2::from_shape_fn((h, w), |(y, x)| {
            let li = self.layer_at(x, y, i);
            let d = self.layers[li].displacement(i, j);
            self.occluded_at(li, [x as f64 + d[0], y as f64 + d[1]], j)
        })
    }

    /// Per-pixel one-hot layer-identity features; used by tests that need
    /// orthogonal features across layers.
    pub fn layer_features(&self, frame: usize) -> crate::flow::FeatureMap {
        let (h, w) = (self.height(), self.width());
        let d = self.layers.len();
        let mut f = Array3::<f32>::zeros((h, w, d));
        for y in 0..h {
            for x in 0..w {
                f[(y, x, self.layer_at(x, y, frame))] = 1.0;
            }
        }
        crate::flow::FeatureMap::new(frame, f).expect("one-hot features are unit norm")
    }

    /// Write the bundle as a dataset directory: frames/, gt.json, scene.toml.
    pub fn save_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.video.save_dir(&dir.join("frames"))?;
        crate::metrics::gt_io::write(
            &self.tracks,
            self.width(),
            self.height(),
            &dir.join("gt.json"),
        )?;
        self.spec.save(&dir.join("scene.toml"))
    }

    /// Rebuild a bundle from a dataset directory (scene.toml is sufficient;
    /// generation is deterministic).
    pub fn load_dir(dir: &std::path::Path) -> Result<Self> {
        let spec = SceneSpec::load(&dir.join("scene.toml"))?;
        make_scene(&spec)
    }
}

/// Chain noisy adjacent flows into baseline tracks (the comparison target
/// for coherence checks and a handy diagnostic).
pub fn chain_adjacent_tracks(
    flows: &std::collections::HashMap<(usize, usize), crate::flow::FlowField>,
    queries: &[(usize, [f64; 2])],
    n_frames: usize,
) -> Vec<crate::metrics::PredictedTrack> {
    let mut out = Vec::with_capacity(queries.len());
    for &(qframe, qpos) in queries {
        let mut points = vec![[f64::NAN, f64::NAN]; n_frames];
        points[qframe] = qpos;
        // forward
        let mut cur = qpos;
        for t in qframe..n_frames - 1 {
            if let Some(f) = flows.get(&(t, t + 1)) {
                if let Some(v) = f.sample(cur[0], cur[1]) {
                    cur = [cur[0] + v[0] as f64, cur[1] + v[1] as f64];
                } // else hold position
            }
            points[t + 1] = cur;
        }
        // backward
        let mut cur = qpos;
        for t in (1..=qframe).rev() {
            if let Some(f) = flows.get(&(t, t - 1)) {
                if let Some(v) = f.sample(cur[0], cur[1]) {
                    cur = [cur[0] + v[0] as f64, cur[1] + v[1] as f64];
                }
            }
            points[t - 1] = cur;
        }
        out.push(crate::metrics::PredictedTrack {
            visible: vec![true; n_frames],
            points,
        });
    }
    out
}
