//! Shared fixtures for the integration and acceptance suites: the desk-scale
//! tracking scene, its reduced training configuration, and the full
//! synth -> flows -> train -> query -> eval pipeline.
#![allow(dead_code)]

use std::collections::HashMap;

use omnitrack_core::flow::{collect_pairwise_flows, ingest, FlowField, IngestConfig};
use omnitrack_core::metrics::{self, GroundTruthTrack, PredictedTrack};
use omnitrack_core::model::{ModelConfig, OmniMotionModel};
use omnitrack_core::render::{full_trajectory, QueryMode, RenderConfig, TrackResult};
use omnitrack_core::synth::{
    make_scene, CorruptMode, MotionProgram, NoiseModel, OracleFlowProvider, SceneSpec,
    SpriteSpec, SyntheticBundle,
};
use omnitrack_core::train::{self, TrainConfig};
use omnitrack_core::video::VideoSequence;

/// The end-to-end tracking scene: 48 frames at 96x96, textured background
/// translating 0.5 px/frame, one sprite moving at 2 px/frame that passes
/// behind a static full-height occluder bar; every sprite point spends
/// exactly 8 frames behind the bar (bar width 11 px / horizontal speed
/// 1.375 px per frame).
pub fn tracking_scene(sigma_px: f64) -> SceneSpec {
    let vx: f64 = 11.0 / 8.0;
    let vy = (4.0 - vx * vx).sqrt(); // speed exactly 2 px/frame
    SceneSpec {
        width: 96,
        height: 96,
        frames: 48,
        background_texture_seed: 101,
        background_velocity: [0.5, 0.0],
        camera: MotionProgram::still(),
        sprites: vec![
            // the tracked sprite, middle depth
            SpriteSpec {
                size: [14, 14],
                depth: 1.0,
                texture_seed: 202,
                motion: MotionProgram::Constant {
                    start: [4.0, 4.0],
                    velocity: [vx, vy],
                },
            },
            // static occluder bar, nearest depth, full height
            SpriteSpec {
                size: [11, 96],
                depth: 0.5,
                texture_seed: 303,
                motion: MotionProgram::Constant {
                    start: [40.0, 0.0],
                    velocity: [0.0, 0.0],
                },
            },
        ],
        noise: NoiseModel {
            sigma_px,
            corrupt_fraction: 0.0,
            corrupt_mode: CorruptMode::BackgroundLock,
            corrupt_forward_only: false,
        },
        tracks_per_sprite: 9,
        background_tracks: 12,
    }
}

/// Reduced configuration for the end-to-end criteria: K = 16 samples,
/// 3 coupling layers, 20k steps are pinned; the remaining knobs are
/// calibrated for single-core runtime.
pub fn acceptance_train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            coupling_layers: 3,
            coupling_hidden: 64,
            coupling_mlp_layers: 3,
            n_freq: 4,
            latent_dim: 32,
            latent_hidden: 64,
            latent_layers: 2,
            latent_freq_scale: 16.0,
            field_hidden: 96,
            field_layers: 3,
            field_freq_scale: 8.0,
            use_gabor: true,
            near: 0.0,
            far: 2.0,
            sigma_bias: -1.0,
        },
        total_steps: steps,
        pairs_per_step: 8,
        correspondences_per_step: 256,
        samples_per_ray: 16,
        photometric: true,
        lambda_pho_max: 10.0,
        lambda_pho_ramp_steps: 10_000,
        lambda_reg: 20.0,
        lambda_pgrad: 1.0,
        lambda_zrange: 1.0,
        photometric_uniform_pixels: false,
        lr_field: 3e-4,
        lr_mapping: 1e-4,
        lr_latent: 1e-3,
        lr_decay_every: 20_000,
        lr_decay_factor: 0.5,
        window_initial: 20,
        window_grow_every: 2_000,
        error_map_refresh_every: 4_000,
        hard_mining: true,
        reg_fraction: 0.25,
        checkpoint_every: 5_000,
        seed,
        tau_vis: 0.5,
    }
}

/// Supervision pairs are collected up to this frame gap and run through the
/// full filter pipeline (adjacent-and-filtered supervision).
pub const SUPERVISION_MAX_GAP: usize = 6;

pub fn build_supervision(
    bundle: &SyntheticBundle,
    noise: NoiseModel,
    seed: u64,
) -> (
    HashMap<(usize, usize), FlowField>,
    omnitrack_core::flow::CorrespondenceSet,
) {
    let mut provider = OracleFlowProvider::new(bundle, noise, seed);
    let flows = collect_pairwise_flows(
        bundle.video.len(),
        (bundle.height(), bundle.width()),
        &mut provider,
        Some(SUPERVISION_MAX_GAP),
        None,
    )
    .expect("flow collection");
    let cfg = IngestConfig {
        max_pair_gap: Some(SUPERVISION_MAX_GAP),
        ..Default::default()
    };
    let (omega, _) = ingest(
        &flows,
        bundle.video.len(),
        (bundle.height(), bundle.width()),
        None,
        &cfg,
    )
    .expect("ingest");
    (flows, omega)
}

pub struct TrainedArtifacts {
    pub bundle: SyntheticBundle,
    pub model: OmniMotionModel<f32>,
    pub tracks: Vec<TrackResult>,
    pub flows: HashMap<(usize, usize), FlowField>,
    pub out_dir: std::path::PathBuf,
    // keep the tempdir alive with the artifacts
    _dir: tempfile::TempDir,
}

/// Query every ground-truth track at its first visible frame.
pub fn query_tracks(
    model: &OmniMotionModel<f32>,
    video: &VideoSequence,
    gts: &[GroundTruthTrack],
    samples_per_ray: usize,
    tau_vis: f64,
) -> Vec<TrackResult> {
    let cfg = RenderConfig {
        samples_per_ray,
        tau_vis,
        near: model.cfg.near,
        far: model.cfg.far,
    };
    let mut rng = omnitrack_core::train::derive_rng(9, 0, 99);
    gts.iter()
        .map(|g| {
            let f = g.first_visible_frame().expect("visible frame");
            full_trajectory(
                model,
                f,
                g.points[f],
                video.width(),
                video.height(),
                video.len(),
                QueryMode::Inference,
                &cfg,
                &mut rng,
            )
            .expect("trajectory")
        })
        .collect()
}

/// Full pipeline: scene -> noisy filtered supervision -> training -> tracks.
pub fn run_pipeline(spec: &SceneSpec, cfg: &TrainConfig) -> TrainedArtifacts {
    let bundle = make_scene(spec).expect("scene");
    let (flows, omega) = build_supervision(&bundle, spec.noise, cfg.seed);
    let dir = tempfile::tempdir().expect("tempdir");
    let mut last = std::time::Instant::now();
    let mut progress = |p: train::Progress| {
        if last.elapsed().as_secs() >= 60 {
            eprintln!(
                "  [train] step {}/{} total {:.5} flow {:.5}",
                p.step, p.total_steps, p.loss.total, p.loss.flow
            );
            last = std::time::Instant::now();
        }
    };
    let out = train::train::<f32>(
        &bundle.video,
        &omega,
        cfg,
        dir.path(),
        None,
        Some(&mut progress),
    )
    .expect("training");
    let loaded =
        omnitrack_core::model::checkpoint::load::<f32>(&out.checkpoint).expect("checkpoint");
    let tracks = query_tracks(
        &loaded.model,
        &bundle.video,
        &bundle.tracks,
        cfg.samples_per_ray,
        cfg.tau_vis,
    );
    TrainedArtifacts {
        bundle,
        model: loaded.model,
        tracks,
        flows,
        out_dir: dir.path().to_path_buf(),
        _dir: dir,
    }
}

pub fn evaluate_tracks(
    tracks: &[TrackResult],
    gts: &[GroundTruthTrack],
    native: (usize, usize),
) -> metrics::MetricsReport {
    let preds: Vec<PredictedTrack> = tracks.iter().map(|t| t.into()).collect();
    metrics::evaluate(&preds, gts, native, 256).expect("evaluation")
}

/// Fraction of gt-visible (point, frame) pairs within `radius_px` at native
/// resolution, and the same fraction over gt-occluded pairs.
pub fn position_fractions(
    tracks: &[TrackResult],
    gts: &[GroundTruthTrack],
    radius_visible: f64,
    radius_occluded: f64,
) -> (f64, f64) {
    let mut vis_ok = 0usize;
    let mut vis_all = 0usize;
    let mut occ_ok = 0usize;
    let mut occ_all = 0usize;
    for (t, g) in tracks.iter().zip(gts) {
        for f in 0..g.len() {
            let p = &t.frames[f];
            let d = ((p.x_px - g.points[f][0]).powi(2) + (p.y_px - g.points[f][1]).powi(2))
                .sqrt();
            if g.occluded[f] {
                occ_all += 1;
                if d <= radius_occluded {
                    occ_ok += 1;
                }
            } else {
                vis_all += 1;
                if d <= radius_visible {
                    vis_ok += 1;
                }
            }
        }
    }
    (
        vis_ok as f64 / vis_all.max(1) as f64,
        occ_ok as f64 / occ_all.max(1) as f64,
    )
}
