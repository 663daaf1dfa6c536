//! Batch construction: pair selection within the curriculum window,
//! error-map-weighted hard mining, stratified depths, deterministic seeding.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::graph::{PairBatch, PhoBatch, StepBatch};
use super::loss::window_size;
use crate::error::{Error, Result};
use crate::flow::CorrespondenceSet;
use crate::model::Real;
use crate::video::{px_to_norm, VideoSequence};

/// Per-frame per-pixel flow error used to bias query sampling.
#[derive(Debug, Clone)]
pub struct ErrorMaps {
    pub maps: Vec<Array2<f32>>,
    pub refreshed_at: usize,
}

impl ErrorMaps {
    pub fn uniform(n_frames: usize, height: usize, width: usize) -> Self {
        ErrorMaps {
            maps: vec![Array2::from_elem((height, width), 1.0); n_frames],
            refreshed_at: 0,
        }
    }

    pub fn weight_at(&self, frame: usize, x: u16, y: u16) -> f64 {
        self.maps[frame][(y as usize, x as usize)] as f64
    }
}

/// Deterministic per-(seed, step, purpose) stream.
pub fn derive_rng(seed: u64, step: usize, purpose: u64) -> ChaCha8Rng {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(step as u64 + 1))
        .wrapping_add(0xd1b54a32d192ed03u64.wrapping_mul(purpose + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Weighted index draw from cumulative weights.
fn draw_weighted(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cum.last().unwrap();
    let u = rng.gen_range(0.0..total);
    match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(k) => (k + 1).min(cum.len() - 1),
        Err(k) => k,
    }
}

/// Draw one training step's supervision batch.
pub fn sample_step_batch<R: Real>(
    omega: &CorrespondenceSet,
    video: &VideoSequence,
    errmaps: &ErrorMaps,
    step: usize,
    cfg: &TrainConfig,
) -> Result<StepBatch<R>> {
    let n = omega.n_frames;
    let window = window_size(step, cfg.window_initial, cfg.window_grow_every, n);
    let mut rng = derive_rng(cfg.seed, step, 1);

    // candidate pairs inside the window with surviving correspondences
    let candidates: Vec<usize> = omega
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.i.abs_diff(p.j) <= window && !p.entries.is_empty())
        .map(|(k, _)| k)
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }

    let per_pair = cfg.correspondences_per_pair();
    let k = cfg.samples_per_ray;
    let (w, h) = (omega.width, omega.height);

    let mut pairs = Vec::with_capacity(cfg.pairs_per_step);
    let mut frames = std::collections::BTreeSet::new();
    for _ in 0..cfg.pairs_per_step {
        let pk = candidates[rng.gen_range(0..candidates.len())];
        let pair = &omega.pairs[pk];
        let b = per_pair;

        // half error-weighted, half uniform query selection
        let n_err = if cfg.hard_mining { b / 2 } else { 0 };
        let mut chosen = Vec::with_capacity(b);
        if n_err > 0 {
            let mut cum = Vec::with_capacity(pair.entries.len());
            let mut acc = 0.0;
            for e in &pair.entries {
                acc += errmaps.weight_at(pair.i, e.p_i[0], e.p_i[1]) + 1e-6;
                cum.push(acc);
            }
            for _ in 0..n_err {
                chosen.push(draw_weighted(&cum, &mut rng));
            }
        }
        while chosen.len() < b {
            chosen.push(rng.gen_range(0..pair.entries.len()));
        }

        let mut queries = Array2::zeros((b, 2));
        let mut targets = Array2::zeros((b, 2));
        let mut colors = Array2::zeros((b, 3));
        for (r, &ei) in chosen.iter().enumerate() {
            let e = &pair.entries[ei];
            queries[(r, 0)] = R::c(px_to_norm(e.p_i[0] as f64, w));
            queries[(r, 1)] = R::c(px_to_norm(e.p_i[1] as f64, h));
            targets[(r, 0)] = R::c(px_to_norm(e.p_j[0] as f64, w));
            targets[(r, 1)] = R::c(px_to_norm(e.p_j[1] as f64, h));
            let frame = video.frame(pair.i);
            for c in 0..3 {
                colors[(r, c)] = R::c(frame[(e.p_i[1] as usize, e.p_i[0] as usize, c)] as f64);
            }
        }

        let depths = stratified_depths::<R>(b, k, cfg.model.near, cfg.model.far, &mut rng);

        let n_reg = ((b as f64) * cfg.reg_fraction).round() as usize;
        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut rng);
        let reg_rows: Vec<usize> = order.iter().take(n_reg).copied().collect();

        let mut pg_order: Vec<usize> = (0..b).collect();
        pg_order.shuffle(&mut rng);
        let pgrad_pairs: Vec<(usize, usize)> = pg_order
            .chunks_exact(2)
            .map(|c| (c[0], c[1]))
            .collect();

        let prev_next = (pair.i > 0 && pair.i + 1 < n).then(|| (pair.i - 1, pair.i + 1));

        let pho = cfg.photometric_uniform_pixels.then(|| {
            let mut q = Array2::zeros((b, 2));
            let mut c3 = Array2::zeros((b, 3));
            for r in 0..b {
                let x = rng.gen_range(0..w);
                let y = rng.gen_range(0..h);
                q[(r, 0)] = R::c(px_to_norm(x as f64, w));
                q[(r, 1)] = R::c(px_to_norm(y as f64, h));
                let frame = video.frame(pair.i);
                for c in 0..3 {
                    c3[(r, c)] = R::c(frame[(y, x, c)] as f64);
                }
            }
            let d = stratified_depths::<R>(b, k, cfg.model.near, cfg.model.far, &mut rng);
            PhoBatch {
                queries: q,
                colors: c3,
                depths: d,
            }
        });

        frames.insert(pair.i);
        frames.insert(pair.j);
        if let Some((p, nx)) = prev_next {
            frames.insert(p);
            frames.insert(nx);
        }

        pairs.push(PairBatch {
            i: pair.i,
            j: pair.j,
            prev_next,
            weight: super::loss::pair_weight(pair.i.abs_diff(pair.j), window),
            queries,
            targets,
            colors,
            depths,
            reg_rows,
            pgrad_pairs,
            pho,
        });
    }

    Ok(StepBatch {
        pairs,
        frames: frames.into_iter().collect(),
        n_frames: n,
    })
}

pub fn stratified_depths<R: Real>(
    b: usize,
    k: usize,
    near: f64,
    far: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<R> {
    let bin = (far - near) / k as f64;
    Array2::from_shape_fn((b, k), |(_, s)| {
        R::c(near + (s as f64 + rng.gen_range(0.0..1.0)) * bin)
    })
}
