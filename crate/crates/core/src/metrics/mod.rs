//! Track evaluation: threshold position accuracy, Average Jaccard, occlusion
//! accuracy, and temporal coherence, at the 256x256 protocol resolution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::TrackResult;

pub const THRESHOLDS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Annotated ground truth: per-frame position and occlusion flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub points: Vec<[f64; 2]>,
    pub occluded: Vec<bool>,
}

impl GroundTruthTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn visible(&self, t: usize) -> bool {
        !self.occluded[t]
    }

    /// First frame where the track is visible (query protocol).
    pub fn first_visible_frame(&self) -> Option<usize> {
        self.occluded.iter().position(|&o| !o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.occluded.len() {
            return Err(Error::Dimension("track length mismatch".into()));
        }
        if self.occluded.iter().all(|&o| o) {
            return Err(Error::InvalidInput(
                "ground-truth track has no visible frame".into(),
            ));
        }
        for (t, p) in self.points.iter().enumerate() {
            if !self.occluded[t] && (!p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite visible position at frame {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Prediction in the same layout: positions plus visibility flags.
#[derive(Debug, Clone)]
pub struct PredictedTrack {
    pub points: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl From<&TrackResult> for PredictedTrack {
    fn from(t: &TrackResult) -> Self {
        PredictedTrack {
            points: t.frames.iter().map(|f| [f.x_px, f.y_px]).collect(),
            visible: t.frames.iter().map(|f| f.visible).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aj: Option<f64>,
    pub delta_avg: Option<f64>,
    pub per_threshold: Option<[f64; 5]>,
    pub oa: f64,
    pub tc: Option<f64>,
    pub n_tracks: usize,
    pub n_frames: usize,
    pub points_evaluated: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Fraction of gt-visible (point, frame) pairs within each threshold, plus
/// the average across thresholds. None when no gt-visible pairs exist.
pub fn position_accuracy(
    preds: &[PredictedTrack],
    gts: &[GroundTruthTrack],
) -> Option<([f64; 5], f64)> {
    let mut within = [0usize; 5];
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        for t in 0..g.len() {
            if !g.visible(t) {
                continue;
            }
            total += 1;
            let d = dist(p.points[t], g.points[t]);
            for (k, &thr) in THRESHOLDS.iter().enumerate() {
                if d <= thr {
                    within[k] += 1;
                }
            }
        }
    }
    if total == 0 {
        return None;
    }
    let mut acc = [0.0; 5];
    let mut sum = 0.0;
    for k in 0..5 {
        acc[k] = within[k] as f64 / total as f64;
        sum += acc[k];
    }
    Some((acc, sum / 5.0))
}

/// Average Jaccard over the five thresholds. A predicted-visible point that
/// is gt-visible but beyond the threshold counts as both a false positive
/// and a false negative.
pub fn average_jaccard(preds: &[PredictedTrack], gts: &[GroundTruthTrack]) -> Option<f64> {
    let mut sum = 0.0;
    let mut any = false;
    for &thr in THRESHOLDS.iter() {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (p, g) in preds.iter().zip(gts) {
            for t in 0..g.len() {
                let gt_vis = g.visible(t);
                let pred_vis = p.visible[t];
                let within = gt_vis && dist(p.points[t], g.points[t]) <= thr;
                if pred_vis && within {
                    tp += 1;
                }
                if pred_vis && !within {
                    fp += 1;
                }
                if gt_vis && !(pred_vis && within) {
                    fnn += 1;
                }
            }
        }
        let denom = tp + fp + fnn;
        if denom > 0 {
            sum += tp as f64 / denom as f64;
            any = true;
        } else {
            sum += 1.0; // vacuously perfect threshold
            any = true;
        }
    }
    any.then_some(sum / 5.0)
}

/// Fraction of (point, frame) pairs where predicted visibility matches the
/// ground-truth occlusion flag.
pub fn occlusion_accuracy(preds: &[PredictedTrack], gts: &[GroundTruthTrack]) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        for t in 0..g.len() {
            total += 1;
            if p.visible[t] == g.visible(t) {
                agree += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

/// Mean L2 distance between predicted and ground-truth accelerations,
/// evaluated where the ground truth is visible at t-1, t, t+1. None when no
/// valid triple exists (e.g. tracks shorter than 3 frames).
pub fn temporal_coherence(preds: &[PredictedTrack], gts: &[GroundTruthTrack]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.len() < 3 {
            continue;
        }
        for t in 1..g.len() - 1 {
            if !(g.visible(t - 1) && g.visible(t) && g.visible(t + 1)) {
                continue;
            }
            let acc = |pts: &[[f64; 2]]| {
                [
                    pts[t + 1][0] - 2.0 * pts[t][0] + pts[t - 1][0],
                    pts[t + 1][1] - 2.0 * pts[t][1] + pts[t - 1][1],
                ]
            };
            let pa = acc(&p.points);
            let ga = acc(&g.points);
            sum += ((pa[0] - ga[0]).powi(2) + (pa[1] - ga[1]).powi(2)).sqrt();
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Scale tracks into the protocol resolution and run all four metrics.
pub fn evaluate(
    preds: &[PredictedTrack],
    gts: &[GroundTruthTrack],
    native: (usize, usize),
    resolution: usize,
) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!(
            "track count mismatch: {} predictions vs {} ground truth",
            preds.len(),
            gts.len()
        )));
    }
    for g in gts {
        g.validate()?;
    }
    let sx = resolution as f64 / native.0 as f64;
    let sy = resolution as f64 / native.1 as f64;
    let scale_p = |tracks: &[PredictedTrack]| -> Vec<PredictedTrack> {
        tracks
            .iter()
            .map(|t| PredictedTrack {
                points: t.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
                visible: t.visible.clone(),
            })
            .collect()
    };
    let scale_g = |tracks: &[GroundTruthTrack]| -> Vec<GroundTruthTrack> {
        tracks
            .iter()
            .map(|t| GroundTruthTrack {
                points: t.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
                occluded: t.occluded.clone(),
            })
            .collect()
    };
    let sp = scale_p(preds);
    let sg = scale_g(gts);

    let pa = position_accuracy(&sp, &sg);
    let n_frames = gts.first().map(|g| g.len()).unwrap_or(0);
    Ok(MetricsReport {
        aj: average_jaccard(&sp, &sg),
        delta_avg: pa.map(|v| v.1),
        per_threshold: pa.map(|v| v.0),
        oa: occlusion_accuracy(&sp, &sg),
        tc: temporal_coherence(&sp, &sg),
        n_tracks: gts.len(),
        n_frames,
        points_evaluated: sg.iter().map(|g| g.len()).sum(),
    })
}

/// Average per-video reports into a benchmark-style summary.
pub fn aggregate(reports: &[MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let mean_opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Some(MetricsReport {
        aj: mean_opt(&|r| r.aj),
        delta_avg: mean_opt(&|r| r.delta_avg),
        per_threshold: None,
        oa: reports.iter().map(|r| r.oa).sum::<f64>() / reports.len() as f64,
        tc: mean_opt(&|r| r.tc),
        n_tracks: reports.iter().map(|r| r.n_tracks).sum(),
        n_frames: reports.first().map(|r| r.n_frames).unwrap_or(0),
        points_evaluated: reports.iter().map(|r| r.points_evaluated).sum(),
    })
}

/// Ground-truth file: {"width", "height", "tracks": [[[x, y, occluded], ..], ..]}.
pub mod gt_io {
    use super::*;

    pub fn write(
        tracks: &[GroundTruthTrack],
        width: usize,
        height: usize,
        path: &Path,
    ) -> Result<()> {
        let tracks_json: Vec<serde_json::Value> = tracks
            .iter()
            .map(|t| {
                let pts: Vec<serde_json::Value> = t
                    .points
                    .iter()
                    .zip(&t.occluded)
                    .map(|(p, &o)| serde_json::json!([p[0], p[1], o]))
                    .collect();
                serde_json::Value::Array(pts)
            })
            .collect();
        let v = serde_json::json!({
            "width": width,
            "height": height,
            "tracks": tracks_json,
        });
        std::fs::write(path, serde_json::to_string_pretty(&v).unwrap())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<(Vec<GroundTruthTrack>, usize, usize)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let width = v["width"].as_u64().unwrap_or(0) as usize;
        let height = v["height"].as_u64().unwrap_or(0) as usize;
        let mut tracks = Vec::new();
        for tv in v["tracks"]
            .as_array()
            .ok_or_else(|| Error::format(path, "missing tracks array"))?
        {
            let mut points = Vec::new();
            let mut occluded = Vec::new();
            for pv in tv.as_array().ok_or_else(|| Error::format(path, "bad track"))? {
                points.push([
                    pv[0].as_f64().unwrap_or(f64::NAN),
                    pv[1].as_f64().unwrap_or(f64::NAN),
                ]);
                occluded.push(pv[2].as_bool().unwrap_or(false));
            }
            tracks.push(GroundTruthTrack { points, occluded });
        }
        Ok((tracks, width, height))
    }
}
