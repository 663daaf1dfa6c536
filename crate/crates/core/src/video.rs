//! Video frames and the pixel/normalized coordinate conventions used
//! throughout the crate.
//!
//! Pixel centers sit at integer coordinates; pixel x in [0, W-1] maps to
//! normalized x in [-1, 1] via `n = 2x/(W-1) - 1`. Depth is separate and
//! lives in [0, 2].

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Ordered RGB frames, values in [0, 1], all the same resolution.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    frames: Vec<Array3<f32>>,
    width: usize,
    height: usize,
}

impl VideoSequence {
    pub fn new(frames: Vec<Array3<f32>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("video has no frames".into()));
        }
        let (h, w, c) = frames[0].dim();
        if c != 3 {
            return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
        }
        for (idx, f) in frames.iter().enumerate() {
            if f.dim() != (h, w, 3) {
                return Err(Error::Resolution {
                    expected: (h, w),
                    got: (f.dim().0, f.dim().1),
                });
            }
            if idx == 0 && (w < 2 || h < 2) {
                return Err(Error::InvalidInput("frames must be at least 2x2".into()));
            }
        }
        Ok(VideoSequence {
            frames,
            width: w,
            height: h,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame(&self, i: usize) -> &Array3<f32> {
        &self.frames[i]
    }

    /// Normalized time of frame i: i / (N-1), in [0, 1]. A single-frame video
    /// gets t = 0.
    pub fn time(&self, i: usize) -> f64 {
        if self.frames.len() <= 1 {
            0.0
        } else {
            i as f64 / (self.frames.len() - 1) as f64
        }
    }

    /// Bilinear color lookup at continuous pixel coordinates; None when the
    /// footprint leaves the image.
    pub fn sample_color(&self, frame: usize, x: f64, y: f64) -> Option<[f32; 3]> {
        bilinear3(self.frame(frame), x, y)
    }

    /// Loads a directory of numbered PNG frames (sorted by file name).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no .png frames in {}",
                dir.display()
            )));
        }
        let mut frames = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = image::open(p)
                .map_err(|e| Error::format(p, format!("png decode failed: {e}")))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut arr = Array3::<f32>::zeros((h, w, 3));
            for (x, y, px) in img.enumerate_pixels() {
                for c in 0..3 {
                    arr[(y as usize, x as usize, c)] = px.0[c] as f32 / 255.0;
                }
            }
            frames.push(arr);
        }
        VideoSequence::new(frames)
    }

    /// Writes frames as zero-padded numbered PNGs into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            let path = dir.join(format!("{i:04}.png"));
            save_frame_png(f, &path)?;
        }
        Ok(())
    }
}

pub fn save_frame_png(frame: &Array3<f32>, path: &Path) -> Result<()> {
    let (h, w, _) = frame.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (frame[(y, x, 0)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (frame[(y, x, 1)].clamp(0.0, 1.0) * 255.0).round() as u8,
                (frame[(y, x, 2)].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)
        .map_err(|e| Error::format(path, format!("png encode failed: {e}")))
}

/// Pixel -> normalized coordinate for one axis (size = W or H).
pub fn px_to_norm(p: f64, size: usize) -> f64 {
    2.0 * p / (size - 1) as f64 - 1.0
}

/// Normalized -> pixel coordinate for one axis.
pub fn norm_to_px(n: f64, size: usize) -> f64 {
    (n + 1.0) * (size - 1) as f64 / 2.0
}

/// Pixel displacement -> normalized displacement for one axis.
pub fn px_delta_to_norm(d: f64, size: usize) -> f64 {
    2.0 * d / (size - 1) as f64
}

/// Normalized displacement -> pixel displacement for one axis.
pub fn norm_delta_to_px(d: f64, size: usize) -> f64 {
    d * (size - 1) as f64 / 2.0
}

/// True if continuous pixel coordinates lie inside the image.
pub fn in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
}

/// Bilinear sample of an H x W x C array at continuous pixel coordinates.
/// Returns None when any of the four footprint pixels falls outside.
pub fn bilinear3(arr: &Array3<f32>, x: f64, y: f64) -> Option<[f32; 3]> {
    let (h, w, _) = arr.dim();
    if !in_bounds(x, y, w, h) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let v00 = arr[(y0, x0, c)];
        let v01 = arr[(y0, x1, c)];
        let v10 = arr[(y1, x0, c)];
        let v11 = arr[(y1, x1, c)];
        out[c] = v00 * (1.0 - fx) * (1.0 - fy)
            + v01 * fx * (1.0 - fy)
            + v10 * (1.0 - fx) * fy
            + v11 * fx * fy;
    }
    Some(out)
}

/// Bilinear sample of a 2-channel field stored as H x W x 2.
pub fn bilinear2(arr: &Array3<f32>, x: f64, y: f64) -> Option<[f32; 2]> {
    let (h, w, _) = arr.dim();
    if !in_bounds(x, y, w, h) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let mut out = [0.0f32; 2];
    for c in 0..2 {
        let v00 = arr[(y0, x0, c)];
        let v01 = arr[(y0, x1, c)];
        let v10 = arr[(y1, x0, c)];
        let v11 = arr[(y1, x1, c)];
        out[c] = v00 * (1.0 - fx) * (1.0 - fy)
            + v01 * fx * (1.0 - fy)
            + v10 * (1.0 - fx) * fy
            + v11 * fx * fy;
    }
    Some(out)
}

/// True when all four bilinear footprint pixels of (x, y) are set in `mask`.
pub fn footprint_valid(mask: &Array2<bool>, x: f64, y: f64) -> bool {
    let (h, w) = mask.dim();
    if !in_bounds(x, y, w, h) {
        return false;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    mask[(y0, x0)] && mask[(y0, x1)] && mask[(y1, x0)] && mask[(y1, x1)]
}
