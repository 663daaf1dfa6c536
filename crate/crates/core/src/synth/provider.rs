//! Oracle flow provider: exact flows plus controllable noise and recorded
//! corruption, for driving the filter pipeline and end-to-end tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SyntheticBundle;
use crate::error::Result;
use crate::flow::{FlowField, FlowProvider};

/// What corrupted pixels receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptMode {
    /// Replace the pixel's flow with the background layer's motion for the
    /// pair: survives cycle checks, caught by the appearance check.
    #[default]
    BackgroundLock,
    /// Add a large offset (> cycle threshold): a guaranteed cycle violation.
    Jump,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// i.i.d. Gaussian noise per flow component, in pixels.
    pub sigma_px: f64,
    /// Fraction of pixels corrupted per pair.
    pub corrupt_fraction: f64,
    pub corrupt_mode: CorruptMode,
    /// Corrupt only pairs with i < j, keeping backward fields exact; makes
    /// injected cycle violations exactly recoverable.
    pub corrupt_forward_only: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma_px: 0.0,
            corrupt_fraction: 0.0,
            corrupt_mode: CorruptMode::BackgroundLock,
            corrupt_forward_only: false,
        }
    }
}

/// Jump-mode corruption offset in pixels (norm 6, comfortably above the
/// 3 px cycle threshold).
pub const JUMP_OFFSET_NORM: f64 = 6.0;

pub struct OracleFlowProvider<'a> {
    bundle: &'a SyntheticBundle,
    noise: NoiseModel,
    seed: u64,
}

impl<'a> OracleFlowProvider<'a> {
    pub fn new(bundle: &'a SyntheticBundle, noise: NoiseModel, seed: u64) -> Self {
        OracleFlowProvider {
            bundle,
            noise,
            seed,
        }
    }

    pub fn exact(bundle: &'a SyntheticBundle) -> Self {
        Self::new(bundle, NoiseModel::default(), 0)
    }

    fn pair_rng(&self, i: usize, j: usize, stream: u64) -> ChaCha8Rng {
        // splitmix-style derivation keyed by (seed, i, j, stream)
        let mut z = self
            .seed
            .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(1 + i as u64))
            .wrapping_add(0xbf58476d1ce4e5b9u64.wrapping_mul(1 + j as u64))
            .wrapping_add(0x94d049bb133111ebu64.wrapping_mul(1 + stream));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
    }

    /// The corrupted-pixel mask this provider uses for pair (i, j);
    /// recorded for test assertions.
    pub fn corruption_mask(&self, i: usize, j: usize) -> Array2<bool> {
        let (h, w) = (self.bundle.height(), self.bundle.width());
        let mut mask = Array2::from_elem((h, w), false);
        if self.noise.corrupt_fraction <= 0.0 || (self.noise.corrupt_forward_only && i > j) {
            return mask;
        }
        let mut rng = self.pair_rng(i, j, 1);
        let margin = JUMP_OFFSET_NORM.ceil() as usize + 1;
        let target = ((h * w) as f64 * self.noise.corrupt_fraction).round() as usize;
        let mut placed = 0;
        let mut guard = 0;
        while placed < target && guard < target * 100 {
            guard += 1;
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            // jump corruption stays clear of the border so the offset lands
            // inside the image
            if matches!(self.noise.corrupt_mode, CorruptMode::Jump)
                && (x < margin || y < margin || x >= w - margin || y >= h - margin)
            {
                continue;
            }
            if !mask[(y, x)] {
                mask[(y, x)] = true;
                placed += 1;
            }
        }
        mask
    }
}

impl FlowProvider for OracleFlowProvider<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn flow(&mut self, i: usize, j: usize, _init: Option<&FlowField>) -> Result<FlowField> {
        let mut flow = self.bundle.exact_flow(i, j);
        let (h, w) = (flow.height(), flow.width());

        if self.noise.corrupt_fraction > 0.0 {
            let mask = self.corruption_mask(i, j);
            let mut rng = self.pair_rng(i, j, 2);
            let bg = self.bundle.layers[0].displacement(i, j);
            for y in 0..h {
                for x in 0..w {
                    if !mask[(y, x)] {
                        continue;
                    }
                    match self.noise.corrupt_mode {
                        CorruptMode::BackgroundLock => {
                            flow.vectors[(y, x, 0)] = bg[0] as f32;
                            flow.vectors[(y, x, 1)] = bg[1] as f32;
                        }
                        CorruptMode::Jump => {
                            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                            flow.vectors[(y, x, 0)] +=
                                (JUMP_OFFSET_NORM * angle.cos()) as f32;
                            flow.vectors[(y, x, 1)] +=
                                (JUMP_OFFSET_NORM * angle.sin()) as f32;
                        }
                    }
                }
            }
        }

        if self.noise.sigma_px > 0.0 {
            let mut rng = self.pair_rng(i, j, 3);
            use rand_distr::{Distribution, StandardNormal};
            for y in 0..h {
                for x in 0..w {
                    for c in 0..2 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        flow.vectors[(y, x, c)] += (z * self.noise.sigma_px) as f32;
                    }
                }
            }
        }
        Ok(flow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_scene, MotionProgram, SceneSpec, SpriteSpec};

    fn bundle() -> SyntheticBundle {
        make_scene(&SceneSpec {
            width: 48,
            height: 48,
            frames: 6,
            sprites: vec![SpriteSpec {
                size: [10, 10],
                depth: 1.0,
                texture_seed: 3,
                motion: MotionProgram::Constant {
                    start: [4.0, 16.0],
                    velocity: [2.0, 0.0],
                },
            }],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_equals_ground_truth() {
        let b = bundle();
        let mut p = OracleFlowProvider::exact(&b);
        let f = p.flow(0, 3, None).unwrap();
        assert_eq!(f.vectors, b.exact_flow(0, 3).vectors);
    }

    #[test]
    fn gaussian_noise_has_expected_mean_absolute_deviation() {
        let b = bundle();
        let sigma = 0.5;
        let mut p = OracleFlowProvider::new(
            &b,
            NoiseModel {
                sigma_px: sigma,
                ..Default::default()
            },
            42,
        );
        let mut mad = 0.0f64;
        let mut n = 0usize;
        for (i, j) in [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 5)] {
            let f = p.flow(i, j, None).unwrap();
            let exact = b.exact_flow(i, j);
            for (v, e) in f.vectors.iter().zip(exact.vectors.iter()) {
                mad += (v - e).abs() as f64;
                n += 1;
            }
        }
        mad /= n as f64;
        let expect = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mad - expect).abs() < 0.01,
            "mad {mad} vs expected {expect} over {n} samples"
        );
    }

    #[test]
    fn corruption_hits_exactly_the_recorded_mask() {
        let b = bundle();
        let mut p = OracleFlowProvider::new(
            &b,
            NoiseModel {
                corrupt_fraction: 0.05,
                corrupt_mode: CorruptMode::Jump,
                ..Default::default()
            },
            7,
        );
        let mask = p.corruption_mask(0, 3);
        let f = p.flow(0, 3, None).unwrap();
        let exact = b.exact_flow(0, 3);
        let mut corrupted = 0;
        for y in 0..48 {
            for x in 0..48 {
                let differs = f.at(x, y) != exact.at(x, y);
                assert_eq!(differs, mask[(y, x)], "pixel ({x}, {y})");
                if differs {
                    corrupted += 1;
                    let dx = (f.at(x, y)[0] - exact.at(x, y)[0]) as f64;
                    let dy = (f.at(x, y)[1] - exact.at(x, y)[1]) as f64;
                    let norm = (dx * dx + dy * dy).sqrt();
                    assert!((norm - JUMP_OFFSET_NORM).abs() < 1e-3);
                }
            }
        }
        assert_eq!(corrupted, (48.0f64 * 48.0 * 0.05).round() as usize);
    }

    #[test]
    fn provider_is_deterministic() {
        let b = bundle();
        let noise = NoiseModel {
            sigma_px: 0.25,
            corrupt_fraction: 0.02,
            corrupt_mode: CorruptMode::BackgroundLock,
            corrupt_forward_only: false,
        };
        let mut p1 = OracleFlowProvider::new(&b, noise, 5);
        let mut p2 = OracleFlowProvider::new(&b, noise, 5);
        assert_eq!(
            p1.flow(1, 4, None).unwrap().vectors,
            p2.flow(1, 4, None).unwrap().vectors
        );
    }
}
