//! Pluggable per-frame feature extraction for the appearance check.

use ndarray::Array3;

use super::FeatureMap;
use crate::error::Result;
use crate::video::VideoSequence;

pub trait FeatureProvider {
    fn features(&self, frame: usize) -> Result<FeatureMap>;
}

/// Desk-scale default: unit-normalized local color-patch descriptors
/// (patch_radius = 1 gives 3x3x3 = 27 dims). Border pixels clamp.
pub struct ColorPatchFeatures<'a> {
    video: &'a VideoSequence,
    patch_radius: usize,
}

impl<'a> ColorPatchFeatures<'a> {
    pub fn new(video: &'a VideoSequence) -> Self {
        ColorPatchFeatures {
            video,
            patch_radius: 1,
        }
    }
}

impl FeatureProvider for ColorPatchFeatures<'_> {
    fn features(&self, frame: usize) -> Result<FeatureMap> {
        let img = self.video.frame(frame);
        let (h, w, _) = img.dim();
        let r = self.patch_radius as isize;
        let side = 2 * self.patch_radius + 1;
        let d = side * side * 3;
        let mut out = Array3::<f32>::zeros((h, w, d));
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        for c in 0..3 {
                            out[(y, x, k)] = img[(yy, xx, c)];
                            k += 1;
                        }
                    }
                }
                let norm: f32 = (0..d).map(|c| out[(y, x, c)].powi(2)).sum::<f32>().sqrt();
                if norm > 1e-8 {
                    for c in 0..d {
                        out[(y, x, c)] /= norm;
                    }
                } else {
                    // flat black patch: substitute a constant unit vector so
                    // the no-zero-norm invariant holds
                    out[(y, x, 0)] = 1.0;
                }
            }
        }
        FeatureMap::new(frame, out)
    }
}
