//! Per-video optimization: the step loop wiring samples, losses, gradients,
//! schedules, hard-example mining and checkpoints together.

pub mod adam;
pub mod config;
pub mod graph;
pub mod loss;
pub mod sampler;

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

pub use adam::{Adam, AdamConfig};
pub use config::TrainConfig;
pub use graph::{predict_flows, LossWeights, StepBatch};
pub use loss::LossBreakdown;
pub use sampler::{derive_rng, sample_step_batch, ErrorMaps};

use crate::error::{Error, Result};
use crate::flow::CorrespondenceSet;
use crate::model::checkpoint;
use crate::model::{OmniMotionModel, ParamGroup, Real};
use crate::video::{px_delta_to_norm, px_to_norm, VideoSequence};

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub final_loss: LossBreakdown,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Recompute per-frame error maps: Euclidean distance between the model's
/// composited flow to the consecutive neighbor (backward neighbor for the
/// final frame) and the supervising input flow, at the supervised pixels.
/// Pixels without supervision get the map's mean.
pub fn refresh_error_maps<R: Real>(
    model: &OmniMotionModel<R>,
    omega: &CorrespondenceSet,
    cfg: &TrainConfig,
    step: usize,
) -> Result<ErrorMaps> {
    let n = omega.n_frames;
    let (w, h) = (omega.width, omega.height);
    let k = cfg.samples_per_ray;
    let time = |f: usize| {
        if n <= 1 {
            0.0
        } else {
            f as f64 / (n - 1) as f64
        }
    };
    let mut maps = Vec::with_capacity(n);
    for i in 0..n {
        let nb = if i + 1 < n { i + 1 } else { i - 1 };
        let mut map = Array2::<f32>::zeros((h, w));
        let mut filled = Array2::<bool>::from_elem((h, w), false);
        let Some(pair) = omega.pair(i, nb) else {
            maps.push(Array2::from_elem((h, w), 1.0));
            continue;
        };
        let mut sum = 0.0f64;
        let mut count = 0usize;
        // deterministic bin-center depths; chunked evaluation
        for chunk in pair.entries.chunks(4096) {
            let b = chunk.len();
            let mut queries = Array2::<R>::zeros((b, 2));
            for (r, e) in chunk.iter().enumerate() {
                queries[(r, 0)] = R::c(px_to_norm(e.p_i[0] as f64, w));
                queries[(r, 1)] = R::c(px_to_norm(e.p_i[1] as f64, h));
            }
            let bin = (cfg.model.far - cfg.model.near) / k as f64;
            let depths = Array2::from_shape_fn((b, k), |(_, s)| {
                R::c(cfg.model.near + (s as f64 + 0.5) * bin)
            });
            let flows = predict_flows(model, &queries, &depths, time(i), time(nb))?;
            for (r, e) in chunk.iter().enumerate() {
                let sup_dx = px_delta_to_norm((e.p_j[0] - e.p_i[0] as f32) as f64, w);
                let sup_dy = px_delta_to_norm((e.p_j[1] - e.p_i[1] as f32) as f64, h);
                let ex = flows[(r, 0)].to_f64_() - sup_dx;
                let ey = flows[(r, 1)].to_f64_() - sup_dy;
                let err = (ex * ex + ey * ey).sqrt() as f32;
                map[(e.p_i[1] as usize, e.p_i[0] as usize)] = err;
                filled[(e.p_i[1] as usize, e.p_i[0] as usize)] = true;
                sum += err as f64;
                count += 1;
            }
        }
        let mean = if count > 0 {
            (sum / count as f64) as f32
        } else {
            1.0
        };
        for ((y, x), f) in filled.indexed_iter() {
            if !f {
                map[(y, x)] = mean;
            }
        }
        maps.push(map);
    }
    Ok(ErrorMaps {
        maps,
        refreshed_at: step,
    })
}

/// Per-step progress callback payload.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub step: usize,
    pub total_steps: usize,
    pub loss: LossBreakdown,
}

fn errmap_state(e: &ErrorMaps, omega: &CorrespondenceSet) -> checkpoint::ErrorMapState {
    checkpoint::ErrorMapState {
        refreshed_at: e.refreshed_at,
        height: omega.height,
        width: omega.width,
        maps: e.maps.iter().map(|m| m.iter().copied().collect()).collect(),
    }
}

/// Run the optimization. `resume` continues from a checkpoint (same config).
pub fn train<R: Real>(
    video: &VideoSequence,
    omega: &CorrespondenceSet,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    mut progress: Option<&mut dyn FnMut(Progress)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if omega.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    if (video.width(), video.height()) != (omega.width, omega.height)
        || video.len() != omega.n_frames
    {
        return Err(Error::Resolution {
            expected: (omega.height, omega.width),
            got: (video.height(), video.width()),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg_hash = cfg.hash();

    let (mut model, mut opt, start_step, resumed_maps) = match resume {
        Some(path) => {
            let mut loaded = checkpoint::load::<R>(path)?;
            if loaded.config_hash != cfg_hash {
                return Err(Error::Config(format!(
                    "checkpoint config hash {} does not match current config {}",
                    loaded.config_hash, cfg_hash
                )));
            }
            let step = loaded.step;
            let maps = loaded.opt.error_maps.take();
            (
                loaded.model,
                Adam::from_state(AdamConfig::default(), loaded.opt),
                step,
                maps,
            )
        }
        None => (
            OmniMotionModel::<R>::init(&cfg.model, cfg.seed),
            Adam::new(AdamConfig::default()),
            0,
            None,
        ),
    };

    let csv_path = out_dir.join("loss.csv");
    let mut csv = std::io::BufWriter::new(if start_step == 0 {
        let mut f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        writeln!(f, "step,total,flow,pho,reg,pgrad,zrange,lr_field")
            .map_err(|e| Error::io(&csv_path, e))?;
        f
    } else {
        std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&csv_path)
            .map_err(|e| Error::io(&csv_path, e))?
    });

    // error maps: uniform at start, recomputed on schedule; resumed runs
    // restore them from the checkpoint so sampling continues bit-identically
    let mut errmaps = ErrorMaps::uniform(omega.n_frames, omega.height, omega.width);
    if let Some(em) = resumed_maps {
        let (h, w, refreshed_at) = (em.height, em.width, em.refreshed_at);
        errmaps = ErrorMaps {
            maps: em
                .maps
                .into_iter()
                .map(|m| Array2::from_shape_vec((h, w), m).expect("stored map shape"))
                .collect(),
            refreshed_at,
        };
    }

    let latest_ckpt = out_dir.join("checkpoint.ckpt");
    let mut last_good: Option<PathBuf> = resume.map(|p| p.to_path_buf());
    let mut initial_loss: Option<f64> = None;
    let mut high_loss_streak = 0usize;
    let mut warned_divergence = false;
    let mut final_loss = LossBreakdown::default();

    for step in start_step..cfg.total_steps {
        if cfg.error_map_refresh_every > 0
            && step > 0
            && step % cfg.error_map_refresh_every == 0
            && cfg.hard_mining
        {
            errmaps = refresh_error_maps(&model, omega, cfg, step)?;
        }

        let batch: StepBatch<R> = sample_step_batch(omega, video, &errmaps, step, cfg)?;
        let weights = LossWeights::at_step(cfg, step);
        model.zero_grads();
        let losses = graph::step_backward(&mut model, &batch, &weights)?;

        if !losses.total.is_finite() {
            let hint = last_good
                .as_ref()
                .map(|p| format!("; last good checkpoint: {}", p.display()))
                .unwrap_or_default();
            return Err(Error::TrainingAborted {
                step,
                reason: format!("non-finite loss{hint}"),
            });
        }

        let decay = loss::lr_decay(step, cfg.lr_decay_every, cfg.lr_decay_factor);
        opt.update(&mut model, |g| match g {
            ParamGroup::Field => cfg.lr_field * decay,
            ParamGroup::Mapping => cfg.lr_mapping * decay,
            ParamGroup::Latent => cfg.lr_latent * decay,
        });

        let init = *initial_loss.get_or_insert(losses.total);
        if losses.total > 10.0 * init {
            high_loss_streak += 1;
            if high_loss_streak >= 1000 && !warned_divergence {
                log::warn!(
                    "possible divergence: loss {:.4} above 10x initial {:.4} for 1000 steps",
                    losses.total,
                    init
                );
                warned_divergence = true;
            }
        } else {
            high_loss_streak = 0;
        }

        writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e}",
            step,
            losses.total,
            losses.flow,
            losses.pho,
            losses.reg,
            losses.pgrad,
            losses.zrange,
            cfg.lr_field * decay
        )
        .map_err(|e| Error::io(&csv_path, e))?;

        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            let mut state = opt.state();
            state.error_maps = Some(errmap_state(&errmaps, omega));
            checkpoint::save(
                &mut model,
                step + 1,
                &cfg_hash,
                Some(&state),
                Some((omega.width, omega.height, omega.n_frames)),
                &latest_ckpt,
            )?;
            last_good = Some(latest_ckpt.clone());
        }

        if let Some(cb) = progress.as_deref_mut() {
            cb(Progress {
                step,
                total_steps: cfg.total_steps,
                loss: losses,
            });
        }
        final_loss = losses;
    }

    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let final_path = out_dir.join("checkpoint_final.ckpt");
    let mut state = opt.state();
    state.error_maps = Some(errmap_state(&errmaps, omega));
    checkpoint::save(
        &mut model,
        cfg.total_steps,
        &cfg_hash,
        Some(&state),
        Some((omega.width, omega.height, omega.n_frames)),
        &final_path,
    )?;

    Ok(TrainOutcome {
        steps_run: cfg.total_steps - start_step,
        final_loss,
        checkpoint: final_path,
        loss_csv: csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_scene, MotionProgram, OracleFlowProvider, SceneSpec, SpriteSpec};

    fn tiny_training_setup() -> (VideoSequence, CorrespondenceSet, TrainConfig) {
        let spec = SceneSpec {
            width: 24,
            height: 24,
            frames: 6,
            sprites: vec![SpriteSpec {
                size: [8, 8],
                depth: 1.0,
                texture_seed: 5,
                motion: MotionProgram::Constant {
                    start: [2.0, 8.0],
                    velocity: [1.0, 0.0],
                },
            }],
            ..Default::default()
        };
        let bundle = make_scene(&spec).unwrap();
        let mut provider = OracleFlowProvider::exact(&bundle);
        let flows =
            crate::flow::collect_pairwise_flows(6, (24, 24), &mut provider, None, None).unwrap();
        let (omega, _) = crate::flow::ingest(
            &flows,
            6,
            (24, 24),
            None,
            &crate::flow::IngestConfig::default(),
        )
        .unwrap();

        let cfg = TrainConfig {
            model: crate::model::ModelConfig::micro(),
            total_steps: 60,
            pairs_per_step: 2,
            correspondences_per_step: 16,
            samples_per_ray: 4,
            checkpoint_every: 25,
            error_map_refresh_every: 30,
            seed: 11,
            ..Default::default()
        };
        (bundle.video, omega, cfg)
    }

    #[test]
    fn smoke_training_runs_and_logs() {
        let (video, omega, cfg) = tiny_training_setup();
        let dir = tempfile::tempdir().unwrap();
        let out = train::<f32>(&video, &omega, &cfg, dir.path(), None, None).unwrap();
        assert_eq!(out.steps_run, 60);
        assert!(out.checkpoint.exists());
        let csv = std::fs::read_to_string(&out.loss_csv).unwrap();
        assert_eq!(csv.lines().count(), 61); // header + one row per step
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn fixed_seed_reproduces_identical_checkpoints() {
        let (video, omega, cfg) = tiny_training_setup();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let o1 = train::<f32>(&video, &omega, &cfg, d1.path(), None, None).unwrap();
        let o2 = train::<f32>(&video, &omega, &cfg, d2.path(), None, None).unwrap();
        assert_eq!(
            std::fs::read(&o1.checkpoint).unwrap(),
            std::fs::read(&o2.checkpoint).unwrap()
        );
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let (video, omega, cfg) = tiny_training_setup();
        let d_full = tempfile::tempdir().unwrap();
        let full = train::<f32>(&video, &omega, &cfg, d_full.path(), None, None).unwrap();
        // the periodic checkpoint.ckpt was last written at step 50
        // (checkpoint_every = 25); resuming from it must land on the same
        // final bytes as the uninterrupted run
        let mid = d_full.path().join("checkpoint.ckpt");
        assert!(mid.exists());
        let resumed_dir = tempfile::tempdir().unwrap();
        let out = train::<f32>(&video, &omega, &cfg, resumed_dir.path(), Some(&mid), None)
            .unwrap();
        assert_eq!(out.steps_run, 10); // 60 - 50
        assert_eq!(
            std::fs::read(&out.checkpoint).unwrap(),
            std::fs::read(&full.checkpoint).unwrap()
        );
    }

    #[test]
    fn training_rejects_mismatched_video() {
        let (video, omega, cfg) = tiny_training_setup();
        let _ = video;
        let wrong = VideoSequence::new(vec![
            ndarray::Array3::zeros((12, 12, 3));
            omega.n_frames
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(train::<f32>(&wrong, &omega, &cfg, dir.path(), None, None).is_err());
    }
}
