// Hand-run calibration probe for the end-to-end configuration.
// cargo test --release -p omnitrack-core --test calibrate -- --ignored --nocapture
mod common;

use omnitrack_core::metrics::PredictedTrack;
use omnitrack_core::synth::chain_adjacent_tracks;

#[test]
#[ignore]
fn calibrate() {
    let steps: usize = std::env::var("CAL_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(2000);
    let corr: usize = std::env::var("CAL_CORR").ok().and_then(|v| v.parse().ok()).unwrap_or(256);
    let sigma: f64 = std::env::var("CAL_SIGMA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.25);
    let spec = common::tracking_scene(sigma);
    let mut cfg = common::acceptance_train_config(steps, 7);
    cfg.correspondences_per_step = corr;
    for (k, v) in std::env::vars() {
        if let Some(key) = k.strip_prefix("CALSET_") {
            let key = key.to_lowercase().replace("__", ".");
            cfg = cfg.with_overrides(&[format!("{key}={v}")]).unwrap();
        }
    }
    eprintln!("steps={steps} corr={corr} sigma={sigma}");

    let t0 = std::time::Instant::now();
    let art = common::run_pipeline(&spec, &cfg);
    eprintln!("pipeline took {:.1} s ({:.1} ms/step)", t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() * 1000.0 / steps as f64);

    let report = common::evaluate_tracks(&art.tracks, &art.bundle.tracks, (96, 96));
    let (vis2, occ8) = common::position_fractions(&art.tracks, &art.bundle.tracks, 2.0, 8.0);
    eprintln!("report: aj={:?} delta_avg={:?} oa={:.4} tc={:?}", report.aj, report.delta_avg, report.oa, report.tc);
    eprintln!("visible within 2px: {vis2:.4}  occluded within 8px: {occ8:.4}");


    // density diagnostics: transmittance at the reported depth, per gt flag
    let mut t_vis = Vec::new();
    let mut t_occ = Vec::new();
    let n = art.bundle.video.len();
    for (g, t) in art.bundle.tracks.iter().zip(&art.tracks) {
        for f in 0..n {
            let psi = art.model.latent_code(f as f64 / (n - 1) as f64);
            let xy = [
                omnitrack_core::video::px_to_norm(t.frames[f].x_px, 96) as f32,
                omnitrack_core::video::px_to_norm(t.frames[f].y_px, 96) as f32,
            ];
            if xy[0].abs() > 1.0 || xy[1].abs() > 1.0 { continue; }
            let tr = omnitrack_core::render::transmittance_at(
                &art.model, xy, t.frames[f].pseudo_depth as f32, &psi, 16).unwrap();
            if g.occluded[f] { t_occ.push(tr as f64); } else { t_vis.push(tr as f64); }
        }
    }
    let med = |v: &mut Vec<f64>| { v.sort_by(|a,b| a.partial_cmp(b).unwrap()); if v.is_empty() {f64::NAN} else {v[v.len()/2]} };
    eprintln!("median T at reported depth: visible={:.3} occluded={:.3}", med(&mut t_vis.clone()), med(&mut t_occ.clone()));
    for tau in [0.1, 0.25, 0.5, 0.75] {
        let oa_v = t_vis.iter().filter(|&&t| t >= tau).count() as f64 / t_vis.len().max(1) as f64;
        let oa_o = t_occ.iter().filter(|&&t| t < tau).count() as f64 / t_occ.len().max(1) as f64;
        let oa = (oa_v * t_vis.len() as f64 + oa_o * t_occ.len() as f64) / (t_vis.len() + t_occ.len()) as f64;
        eprintln!("tau {tau}: OA {oa:.3} (visible-correct {oa_v:.3}, occluded-correct {oa_o:.3})");
    }
    // chained-baseline TC comparison
    let queries: Vec<(usize, [f64; 2])> = art.bundle.tracks.iter().map(|g| {
        let f = g.first_visible_frame().unwrap();
        (f, g.points[f])
    }).collect();
    let chained = chain_adjacent_tracks(&art.flows, &queries, 48);
    let preds: Vec<PredictedTrack> = art.tracks.iter().map(|t| t.into()).collect();
    let scale = 256.0 / 96.0;
    let s = |ts: &[PredictedTrack]| -> Vec<PredictedTrack> {
        ts.iter().map(|t| PredictedTrack {
            points: t.points.iter().map(|p| [p[0]*scale, p[1]*scale]).collect(),
            visible: t.visible.clone(),
        }).collect()
    };
    let gt256: Vec<_> = art.bundle.tracks.iter().map(|g| omnitrack_core::metrics::GroundTruthTrack {
        points: g.points.iter().map(|p| [p[0]*scale, p[1]*scale]).collect(),
        occluded: g.occluded.clone(),
    }).collect();
    let tc_ours = omnitrack_core::metrics::temporal_coherence(&s(&preds), &gt256);
    let tc_chain = omnitrack_core::metrics::temporal_coherence(&s(&chained), &gt256);
    eprintln!("tc ours={tc_ours:?} chained={tc_chain:?}");

    // pseudo-depth ordering probe
    let occl_frames: Vec<usize> = (0..48).filter(|&t| art.bundle.tracks.iter().any(|g| g.occluded[t])).collect();
    eprintln!("frames with occlusion: {:?}", occl_frames);
}
