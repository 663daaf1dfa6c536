//! Turning the representation into motion answers: orthographic rays,
//! stratified sampling, alpha compositing, transmittance-based visibility,
//! and full-length trajectories.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{OmniMotionModel, Real};

/// How ray sample depths are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// One uniform draw per equal depth bin.
    Stratified,
    /// Bin centers; used at inference and in tests.
    Deterministic,
}

/// How a query's representative correspondence is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Alpha-composite all samples (training-time rule).
    Training,
    /// Take the single sample with the largest alpha value.
    Inference,
    /// Take the sample with the largest compositing weight T_k * alpha_k
    /// (alternative inference rule, off by default).
    InferenceMaxWeight,
}

/// Renderer knobs; defaults follow the full-scale configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    /// Visibility threshold on transmittance at the mapped depth.
    pub tau_vis: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 32,
            tau_vis: 0.5,
            near: 0.0,
            far: 2.0,
        }
    }
}

/// Samples along one orthographic ray, with model evaluations attached.
#[derive(Debug, Clone)]
pub struct RaySamples<R> {
    /// Normalized pixel the ray passes through.
    pub origin_xy: [R; 2],
    /// Strictly increasing depths in [near, far).
    pub depths: Vec<R>,
    /// Local 3D sample points [x, y, z_k].
    pub points: Array2<R>,
    pub sigma: Array1<R>,
    pub color: Array2<R>,
    pub alpha: Array1<R>,
    /// T_k = prod_{l<k} (1 - alpha_l); T_1 = 1.
    pub transmittance: Array1<R>,
}

/// Per-frame answer for one query point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramePoint {
    pub x_px: f64,
    pub y_px: f64,
    pub visible: bool,
    pub pseudo_depth: f64,
}

/// A full-length trajectory for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackResult {
    pub query_frame: usize,
    pub query_xy_px: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FramePoint>,
}

/// Sample depths for one ray. Stratified mode draws one uniform depth per
/// equal bin of [near, far); deterministic mode takes bin centers.
pub fn sample_depths<R: Real>(
    k: usize,
    near: f64,
    far: f64,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Vec<R> {
    assert!(k >= 1);
    let bin = (far - near) / k as f64;
    (0..k)
        .map(|i| {
            let jitter = match mode {
                SampleMode::Stratified => rng.gen_range(0.0..1.0),
                SampleMode::Deterministic => 0.5,
            };
            R::c(near + (i as f64 + jitter) * bin)
        })
        .collect()
}

/// Build ray sample points for a normalized pixel: x_i^k = [p, z_k].
pub fn ray_points<R: Real>(p: [R; 2], depths: &[R]) -> Array2<R> {
    let mut pts = Array2::zeros((depths.len(), 3));
    for (k, &z) in depths.iter().enumerate() {
        pts[(k, 0)] = p[0];
        pts[(k, 1)] = p[1];
        pts[(k, 2)] = z;
    }
    pts
}

/// alpha_k = 1 - exp(-sigma_k) and the running transmittance.
pub fn alphas_and_transmittance<R: Real>(sigma: &Array1<R>) -> (Array1<R>, Array1<R>) {
    let k = sigma.len();
    let mut alpha = Array1::zeros(k);
    let mut trans = Array1::zeros(k);
    let mut t = R::one();
    for i in 0..k {
        alpha[i] = R::one() - (-sigma[i]).exp();
        trans[i] = t;
        t = t * (R::one() - alpha[i]);
    }
    (alpha, trans)
}

/// Compositing weights w_k = T_k * alpha_k.
pub fn composite_weights<R: Real>(samples: &RaySamples<R>) -> Array1<R> {
    let k = samples.alpha.len();
    let mut w = Array1::zeros(k);
    for i in 0..k {
        w[i] = samples.transmittance[i] * samples.alpha[i];
    }
    w
}

/// Evaluate a ray through the model for frame `i`: map samples to canonical
/// space, query the field, fill in alpha/transmittance. Also returns the
/// canonical points so callers can map them onward to other frames.
pub fn sample_ray<R: Real>(
    model: &OmniMotionModel<R>,
    p: [R; 2],
    psi_i: &Array1<R>,
    k: usize,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<(RaySamples<R>, Array2<R>)> {
    let cfg = &model.cfg;
    let depths = sample_depths::<R>(k, cfg.near, cfg.far, mode, rng);
    let points = ray_points(p, &depths);
    let u = model.map_to_canonical(&points, psi_i)?;
    let (sigma, color) = model.query_canonical(&u);
    let (alpha, transmittance) = alphas_and_transmittance(&sigma);
    Ok((
        RaySamples {
            origin_xy: p,
            depths,
            points,
            sigma,
            color,
            alpha,
            transmittance,
        },
        u,
    ))
}

/// Alpha compositing of mapped points: x_hat = sum_k T_k a_k x_j^k.
/// Returns the composited 3D point, its 2D orthographic projection, and the
/// accumulated opacity sum_k T_k a_k (no normalization is applied).
pub fn composite_correspondence<R: Real>(
    samples: &RaySamples<R>,
    mapped: &Array2<R>,
) -> ([R; 3], [R; 2], R) {
    let w = composite_weights(samples);
    let mut out = [R::zero(); 3];
    let mut acc = R::zero();
    for k in 0..w.len() {
        acc = acc + w[k];
        for c in 0..3 {
            out[c] = out[c] + w[k] * mapped[(k, c)];
        }
    }
    (out, [out[0], out[1]], acc)
}

/// Same weights applied to sample colors.
pub fn composite_color<R: Real>(samples: &RaySamples<R>) -> [R; 3] {
    let w = composite_weights(samples);
    let mut out = [R::zero(); 3];
    for k in 0..w.len() {
        for c in 0..3 {
            out[c] = out[c] + w[k] * samples.color[(k, c)];
        }
    }
    out
}

/// Same weights applied to sample depths; relative ordering only.
pub fn composite_pseudo_depth<R: Real>(samples: &RaySamples<R>) -> R {
    let w = composite_weights(samples);
    let mut out = R::zero();
    for k in 0..w.len() {
        out = out + w[k] * samples.depths[k];
    }
    out
}

/// Transmittance of the frame-j ray through (x, y) accumulated over samples
/// strictly in front of `depth`.
pub fn transmittance_at<R: Real>(
    model: &OmniMotionModel<R>,
    xy: [R; 2],
    depth: R,
    psi_j: &Array1<R>,
    k: usize,
) -> Result<R> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let (samples, _) = sample_ray(model, xy, psi_j, k, SampleMode::Deterministic, &mut rng)?;
    let mut t = R::one();
    for i in 0..k {
        if samples.depths[i] < depth {
            t = t * (R::one() - samples.alpha[i]);
        }
    }
    Ok(t)
}

/// Visibility of a mapped 3D location in frame j: visible iff the
/// transmittance at its depth is at least tau_vis.
pub fn visibility<R: Real>(
    model: &OmniMotionModel<R>,
    mapped: [R; 3],
    psi_j: &Array1<R>,
    cfg: &RenderConfig,
) -> Result<bool> {
    let t = transmittance_at(
        model,
        [mapped[0], mapped[1]],
        mapped[2],
        psi_j,
        cfg.samples_per_ray,
    )?;
    Ok(t.to_f64_() >= cfg.tau_vis)
}

/// Motion query: predicted location of normalized pixel p_i of frame i in
/// frame j, with visibility and the mapped pseudo-depth.
///
/// Training mode composites all samples; inference mode reports the single
/// sample with the largest alpha value.
pub fn query_motion<R: Real>(
    model: &OmniMotionModel<R>,
    p_i: [R; 2],
    psi_i: &Array1<R>,
    psi_j: &Array1<R>,
    mode: QueryMode,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
) -> Result<([R; 2], bool, R)> {
    if p_i[0].to_f64_().abs() > 1.0 || p_i[1].to_f64_().abs() > 1.0 {
        return Err(Error::InvalidInput(format!(
            "query point ({}, {}) outside [-1,1]^2",
            p_i[0], p_i[1]
        )));
    }
    let sample_mode = match mode {
        QueryMode::Training => SampleMode::Stratified,
        _ => SampleMode::Deterministic,
    };
    let (samples, u) = sample_ray(model, p_i, psi_i, cfg.samples_per_ray, sample_mode, rng)?;
    let mapped = model.map_from_canonical(&u, psi_j)?;

    let rep: [R; 3] = match mode {
        QueryMode::Training => {
            let (x3, _, _) = composite_correspondence(&samples, &mapped);
            x3
        }
        QueryMode::Inference => {
            let mut best = 0;
            for k in 1..samples.alpha.len() {
                if samples.alpha[k] > samples.alpha[best] {
                    best = k;
                }
            }
            [mapped[(best, 0)], mapped[(best, 1)], mapped[(best, 2)]]
        }
        QueryMode::InferenceMaxWeight => {
            let w = composite_weights(&samples);
            let mut best = 0;
            for k in 1..w.len() {
                if w[k] > w[best] {
                    best = k;
                }
            }
            [mapped[(best, 0)], mapped[(best, 1)], mapped[(best, 2)]]
        }
    };
    let visible = visibility(model, rep, psi_j, cfg)?;
    Ok(([rep[0], rep[1]], visible, rep[2]))
}

/// Full-length trajectory of a pixel query across every frame of the video.
/// Positions are defined on every frame, including occluded spans.
pub fn full_trajectory<R: Real>(
    model: &OmniMotionModel<R>,
    query_frame: usize,
    query_xy_px: [f64; 2],
    width: usize,
    height: usize,
    n_frames: usize,
    mode: QueryMode,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
) -> Result<TrackResult> {
    let p = [
        R::c(crate::video::px_to_norm(query_xy_px[0], width)),
        R::c(crate::video::px_to_norm(query_xy_px[1], height)),
    ];
    let time = |f: usize| {
        if n_frames <= 1 {
            0.0
        } else {
            f as f64 / (n_frames - 1) as f64
        }
    };
    let psi_i = model.latent_code(time(query_frame));
    let mut frames = Vec::with_capacity(n_frames);
    for j in 0..n_frames {
        let psi_j = model.latent_code(time(j));
        let (p_j, visible, depth) = query_motion(model, p, &psi_i, &psi_j, mode, cfg, rng)?;
        frames.push(FramePoint {
            x_px: crate::video::norm_to_px(p_j[0].to_f64_(), width),
            y_px: crate::video::norm_to_px(p_j[1].to_f64_(), height),
            visible,
            pseudo_depth: depth.to_f64_(),
        });
    }
    Ok(TrackResult {
        query_frame,
        query_xy_px,
        width,
        height,
        frames,
    })
}

/// Composited pseudo-depth map of a whole frame (visualization and the
/// depth-ordering check).
pub fn pseudo_depth_map<R: Real>(
    model: &OmniMotionModel<R>,
    frame: usize,
    n_frames: usize,
    width: usize,
    height: usize,
    k: usize,
) -> Result<Array2<f64>> {
    let t = if n_frames <= 1 {
        0.0
    } else {
        frame as f64 / (n_frames - 1) as f64
    };
    let psi = model.latent_code(t);
    let mut out = Array2::zeros((height, width));
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    for y in 0..height {
        for x in 0..width {
            let p = [
                R::c(crate::video::px_to_norm(x as f64, width)),
                R::c(crate::video::px_to_norm(y as f64, height)),
            ];
            let (samples, _) = sample_ray(model, p, &psi, k, SampleMode::Deterministic, &mut rng)?;
            out[(y, x)] = composite_pseudo_depth(&samples).to_f64_();
        }
    }
    Ok(out)
}

/// Track export: one JSON line per query, fields
/// {query_frame, query_xy_px, width, height, frames: [[x_px, y_px, visible, pseudo_depth], ..]}.
pub mod track_io {
    use std::io::{BufRead, Write};
    use std::path::Path;

    use super::{FramePoint, TrackResult};
    use crate::error::{Error, Result};

    pub fn write_jsonl(tracks: &[TrackResult], path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for t in tracks {
            let frames: Vec<serde_json::Value> = t
                .frames
                .iter()
                .map(|f| serde_json::json!([f.x_px, f.y_px, f.visible, f.pseudo_depth]))
                .collect();
            let line = serde_json::json!({
                "query_frame": t.query_frame,
                "query_xy_px": t.query_xy_px,
                "width": t.width,
                "height": t.height,
                "frames": frames,
            });
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<TrackResult>> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut out = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            let frames = v["frames"]
                .as_array()
                .ok_or_else(|| Error::format(path, "missing frames array"))?
                .iter()
                .map(|f| FramePoint {
                    x_px: f[0].as_f64().unwrap_or(f64::NAN),
                    y_px: f[1].as_f64().unwrap_or(f64::NAN),
                    visible: f[2].as_bool().unwrap_or(false),
                    pseudo_depth: f[3].as_f64().unwrap_or(0.0),
                })
                .collect();
            out.push(TrackResult {
                query_frame: v["query_frame"].as_u64().unwrap_or(0) as usize,
                query_xy_px: [
                    v["query_xy_px"][0].as_f64().unwrap_or(f64::NAN),
                    v["query_xy_px"][1].as_f64().unwrap_or(f64::NAN),
                ],
                width: v["width"].as_u64().unwrap_or(0) as usize,
                height: v["height"].as_u64().unwrap_or(0) as usize,
                frames,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build_samples(alphas: &[f64], depths: &[f64]) -> RaySamples<f64> {
        let k = alphas.len();
        let sigma = Array1::from_iter(alphas.iter().map(|&a| -(1.0f64 - a).ln()));
        let (alpha, transmittance) = alphas_and_transmittance(&sigma);
        RaySamples {
            origin_xy: [0.0, 0.0],
            depths: depths.to_vec(),
            points: ray_points([0.0, 0.0], depths),
            sigma,
            color: Array2::zeros((k, 3)),
            alpha,
            transmittance,
        }
    }

    #[test]
    fn deterministic_depths_are_bin_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sample_depths::<f64>(2, 0.0, 2.0, SampleMode::Deterministic, &mut rng);
        assert_eq!(d, vec![0.5, 1.5]);
    }

    #[test]
    fn stratified_depths_hit_each_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = sample_depths::<f64>(32, 0.0, 2.0, SampleMode::Stratified, &mut rng);
            for (i, &z) in d.iter().enumerate() {
                let lo = 2.0 * i as f64 / 32.0;
                let hi = 2.0 * (i + 1) as f64 / 32.0;
                assert!(z >= lo && z < hi, "sample {z} escaped bin [{lo}, {hi})");
            }
        }
    }

    #[test]
    fn composite_matches_hand_example() {
        // alpha = (0.5, 0.5) -> weights (0.5, 0.25)
        let s = build_samples(&[0.5, 0.5], &[0.5, 1.5]);
        let mapped = ndarray::array![[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]];
        let (x3, p2, acc) = composite_correspondence(&s, &mapped);
        for c in 0..3 {
            assert!((x3[c] - 1.25).abs() < 1e-12);
        }
        assert!((p2[0] - 1.25).abs() < 1e-12);
        assert!((acc - 0.75).abs() < 1e-12);
        // pseudo-depth example: z = (0.5, 1.5) -> 0.625
        assert!((composite_pseudo_depth(&s) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn composite_color_hand_example() {
        let mut s = build_samples(&[0.5, 0.5], &[0.5, 1.5]);
        s.color = ndarray::array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let c = composite_color(&s);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert_eq!(c[1], 0.0);
        assert!((c[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn vacuum_ray_gives_zeros() {
        let s = build_samples(&[0.0, 0.0, 0.0], &[0.3, 0.9, 1.7]);
        let mapped = ndarray::array![[1.0, 2.0, 0.3], [4.0, 5.0, 0.9], [7.0, 8.0, 1.7]];
        let (x3, _, acc) = composite_correspondence(&s, &mapped);
        assert_eq!(x3, [0.0, 0.0, 0.0]);
        assert_eq!(acc, 0.0);
        assert_eq!(composite_color(&s), [0.0, 0.0, 0.0]);
        assert_eq!(composite_pseudo_depth(&s), 0.0);
    }

    #[test]
    fn single_opaque_sample_dominates() {
        let s = build_samples(&[1.0 - 1e-12], &[0.7]);
        let mapped = ndarray::array![[0.2, -0.4, 0.7]];
        let (x3, _, acc) = composite_correspondence(&s, &mapped);
        assert!((x3[0] - 0.2).abs() < 1e-9);
        assert!((acc - 1.0).abs() < 1e-9);
        assert!((composite_pseudo_depth(&s) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn k1_degenerates_to_alpha_times_point() {
        let s = build_samples(&[0.37], &[1.1]);
        let mapped = ndarray::array![[2.0, -1.0, 1.1]];
        let (x3, _, _) = composite_correspondence(&s, &mapped);
        assert!((x3[0] - 0.37 * 2.0).abs() < 1e-12);
        assert!((x3[1] + 0.37).abs() < 1e-12);
    }

    #[test]
    fn weights_nonnegative_and_sum_below_one() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let alphas: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..0.999)).collect();
            let depths: Vec<f64> = (0..16).map(|i| 0.0625 + i as f64 * 0.125).collect();
            let s = build_samples(&alphas, &depths);
            let w = composite_weights(&s);
            let sum: f64 = w.iter().sum();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!(sum <= 1.0 + 1e-9, "sum {sum}");
        }
    }

    #[test]
    fn identity_model_query_returns_input_point() {
        let model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 7);
        let cfg = RenderConfig {
            samples_per_ray: 8,
            ..Default::default()
        };
        let psi_i = model.latent_code(0.0);
        let psi_j = model.latent_code(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [QueryMode::Inference, QueryMode::InferenceMaxWeight] {
            let (p, _, _) =
                query_motion(&model, [0.25, -0.5], &psi_i, &psi_j, mode, &cfg, &mut rng).unwrap();
            assert!((p[0] - 0.25).abs() < 1e-9, "{mode:?}");
            assert!((p[1] + 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn query_rejects_out_of_range_points() {
        let model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 8);
        let cfg = RenderConfig::default();
        let psi = model.latent_code(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let res = query_motion(
            &model,
            [1.5, 0.0],
            &psi,
            &psi,
            QueryMode::Inference,
            &cfg,
            &mut rng,
        );
        assert!(res.is_err());
    }

    #[test]
    fn raising_tau_never_turns_occluded_into_visible() {
        let model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 9);
        let psi = model.latent_code(0.4);
        let mut prev_visible = true;
        for i in 0..11 {
            let tau = i as f64 / 10.0;
            let cfg = RenderConfig {
                samples_per_ray: 8,
                tau_vis: tau,
                ..Default::default()
            };
            let v = visibility(&model, [0.1, 0.1, 1.3], &psi, &cfg).unwrap();
            if !prev_visible {
                assert!(!v, "visibility became true at larger tau {tau}");
            }
            prev_visible = v;
        }
    }

    #[test]
    fn identity_model_full_trajectory_is_constant() {
        let model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 10);
        let cfg = RenderConfig {
            samples_per_ray: 8,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let track = full_trajectory(
            &model,
            0,
            [12.0, 34.0],
            96,
            96,
            5,
            QueryMode::Inference,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(track.frames.len(), 5);
        for f in &track.frames {
            assert!((f.x_px - 12.0).abs() < 1e-6);
            assert!((f.y_px - 34.0).abs() < 1e-6);
        }
    }

    #[test]
    fn track_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.jsonl");
        let tracks = vec![TrackResult {
            query_frame: 2,
            query_xy_px: [10.0, 20.0],
            width: 96,
            height: 96,
            frames: vec![
                FramePoint {
                    x_px: 1.5,
                    y_px: 2.5,
                    visible: true,
                    pseudo_depth: 0.7,
                },
                FramePoint {
                    x_px: 3.0,
                    y_px: 4.0,
                    visible: false,
                    pseudo_depth: 1.1,
                },
            ],
        }];
        track_io::write_jsonl(&tracks, &path).unwrap();
        let back = track_io::read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].query_frame, 2);
        assert!(!back[0].frames[1].visible);
        assert_eq!(back[0].frames[0].pseudo_depth, 0.7);
    }
}
