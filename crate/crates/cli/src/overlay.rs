//! Trajectory overlays (per-track color, cross glyph on occluded frames) and
//! color-mapped pseudo-depth exports.

use std::path::Path;

use anyhow::Result;
use ndarray::Array3;

use omnitrack_core::model::OmniMotionModel;
use omnitrack_core::render::{pseudo_depth_map, TrackResult};
use omnitrack_core::video::{save_frame_png, VideoSequence};

fn track_color(index: usize) -> [f32; 3] {
    // evenly spaced hues, full saturation
    let h = (index as f32 * 0.618_034) % 1.0;
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    match i as i32 % 6 {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    }
}

fn put(img: &mut Array3<f32>, x: i64, y: i64, c: [f32; 3]) {
    let (h, w, _) = img.dim();
    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        for k in 0..3 {
            img[(y as usize, x as usize, k)] = c[k];
        }
    }
}

fn draw_line(img: &mut Array3<f32>, a: [f64; 2], b: [f64; 2], c: [f32; 3]) {
    let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(
            img,
            (a[0] + t * (b[0] - a[0])).round() as i64,
            (a[1] + t * (b[1] - a[1])).round() as i64,
            c,
        );
    }
}

fn draw_dot(img: &mut Array3<f32>, p: [f64; 2], c: [f32; 3]) {
    let (x, y) = (p[0].round() as i64, p[1].round() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, x + dx, y + dy, c);
        }
    }
}

fn draw_cross(img: &mut Array3<f32>, p: [f64; 2], c: [f32; 3]) {
    let (x, y) = (p[0].round() as i64, p[1].round() as i64);
    for d in -2..=2 {
        put(img, x + d, y + d, c);
        put(img, x + d, y - d, c);
    }
}

/// One overlay image per frame: path history plus a dot (visible) or cross
/// (occluded) at the current position. An empty track set copies frames
/// unmodified.
pub fn render_overlays(
    video: &VideoSequence,
    tracks: &[TrackResult],
    out: &Path,
) -> Result<()> {
    for t in 0..video.len() {
        let mut img = video.frame(t).clone();
        for (k, track) in tracks.iter().enumerate() {
            if track.frames.is_empty() {
                continue;
            }
            let color = track_color(k);
            // path history up to the current frame
            for s in 1..=t.min(track.frames.len() - 1) {
                let a = &track.frames[s - 1];
                let b = &track.frames[s];
                if a.x_px.is_finite() && b.x_px.is_finite() {
                    draw_line(&mut img, [a.x_px, a.y_px], [b.x_px, b.y_px], color);
                }
            }
            let f = &track.frames[t.min(track.frames.len() - 1)];
            if f.visible {
                draw_dot(&mut img, [f.x_px, f.y_px], color);
            } else {
                draw_cross(&mut img, [f.x_px, f.y_px], color);
            }
        }
        save_frame_png(&img, &out.join(format!("overlay_{t:04}.png")))?;
    }
    Ok(())
}

/// Blue = closer, red = farther (normalized over the video's depth range).
fn depth_color(v: f64) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0) as f32;
    [v, 0.2 + 0.3 * (1.0 - (2.0 * v - 1.0).abs()), 1.0 - v]
}

pub fn render_depth_maps(
    model: &OmniMotionModel<f32>,
    video: &VideoSequence,
    out: &Path,
) -> Result<()> {
    let (w, h, n) = (video.width(), video.height(), video.len());
    // common normalization across frames so colors are comparable
    let mut maps = Vec::with_capacity(n);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let map = pseudo_depth_map(model, t, n, w, h, 16)?;
        for &v in map.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        maps.push(map);
    }
    let span = (hi - lo).max(1e-9);
    for (t, map) in maps.iter().enumerate() {
        let mut img = Array3::<f32>::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let c = depth_color((map[(y, x)] - lo) / span);
                for k in 0..3 {
                    img[(y, x, k)] = c[k];
                }
            }
        }
        save_frame_png(&img, &out.join(format!("depth_{t:04}.png")))?;
    }
    Ok(())
}
