mod manifest;
mod overlay;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use omnitrack_core::flow::{
    collect_pairwise_flows, ingest, ColorPatchFeatures, FeatureProvider, ImportProvider,
    IngestConfig,
};
use omnitrack_core::metrics;
use omnitrack_core::model::checkpoint;
use omnitrack_core::render::{self, track_io, QueryMode, RenderConfig};
use omnitrack_core::synth::{self, SceneSpec, SyntheticBundle};
use omnitrack_core::train::TrainConfig;
use omnitrack_core::video::VideoSequence;

#[derive(Parser)]
#[command(
    name = "omnitrack",
    version,
    about = "Consolidate noisy pairwise optical flow into a globally consistent,\n\
             queryable full-length motion representation for a video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset (frames, ground truth, scene spec).
    Synth(SynthArgs),
    /// Collect pairwise flows, filter them, and build the supervision set.
    Flows(FlowsArgs),
    /// Optimize the motion representation against a supervision set.
    Train(TrainArgs),
    /// Query a trained checkpoint for full-length trajectories.
    Query(QueryArgs),
    /// Evaluate predicted tracks against ground truth.
    Eval(EvalArgs),
    /// Draw trajectories over video frames; optionally export pseudo-depth maps.
    RenderOverlay(RenderOverlayArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the scene's texture/noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    /// Exact flows (plus configured noise) from a synthetic scene directory.
    Oracle,
    /// Precomputed flow files in the cache format.
    Import,
}

#[derive(Args)]
struct FlowsArgs {
    /// Video dataset directory (frames/ plus scene.toml for the oracle).
    #[arg(long)]
    video: PathBuf,
    #[arg(long, value_enum)]
    provider: ProviderKind,
    /// Output directory for the supervision set and flow cache.
    #[arg(long)]
    out: PathBuf,
    /// Directory of precomputed flows (import provider).
    #[arg(long)]
    import: Option<PathBuf>,
    /// Disable chaining augmentation.
    #[arg(long)]
    no_chain: bool,
    /// Disable the occlusion-rescue bypass.
    #[arg(long)]
    no_rescue: bool,
    /// Disable the appearance check.
    #[arg(long)]
    no_appearance: bool,
    /// Collect only pairs up to this frame gap (default exhaustive).
    #[arg(long)]
    max_gap: Option<usize>,
    /// Override the oracle's Gaussian flow noise (pixels).
    #[arg(long)]
    sigma: Option<f64>,
    /// Override the oracle's corruption fraction.
    #[arg(long)]
    corrupt_fraction: Option<f64>,
    /// Seed for oracle noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Video dataset directory (frames/).
    #[arg(long)]
    video: PathBuf,
    /// Directory holding omega.omc from `omnitrack flows`.
    #[arg(long)]
    flows: PathBuf,
    /// Training config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint/output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dotted-path config overrides, e.g. --set total_steps=500.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Seed override (equivalent to --set seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from a checkpoint written with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Query points as frame:x,y pairs separated by ';', e.g. "0:12,34;5:40,8".
    #[arg(long)]
    points: Option<String>,
    /// File of query points, one "frame x y" per line.
    #[arg(long)]
    points_file: Option<PathBuf>,
    /// Output JSON-lines track file.
    #[arg(long)]
    out: PathBuf,
    /// Correspondence rule at query time.
    #[arg(long, value_enum, default_value_t = QueryModeArg::Inference)]
    mode: QueryModeArg,
    /// Visibility threshold on transmittance.
    #[arg(long, default_value_t = 0.5)]
    tau_vis: f64,
    /// Ray samples per query.
    #[arg(long, default_value_t = 32)]
    samples: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum QueryModeArg {
    Training,
    Inference,
    InferenceMaxWeight,
}

impl From<QueryModeArg> for QueryMode {
    fn from(m: QueryModeArg) -> Self {
        match m {
            QueryModeArg::Training => QueryMode::Training,
            QueryModeArg::Inference => QueryMode::Inference,
            QueryModeArg::InferenceMaxWeight => QueryMode::InferenceMaxWeight,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted tracks (JSON lines).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Protocol resolution (tracks are rescaled to this).
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderOverlayArgs {
    /// Track file (JSON lines).
    #[arg(long)]
    tracks: PathBuf,
    /// Video dataset directory (frames/).
    #[arg(long)]
    video: PathBuf,
    /// Output directory for overlay (and depth) frames.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint for pseudo-depth map export.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Flows(a) => cmd_flows(a),
        Command::Train(a) => cmd_train(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::RenderOverlay(a) => cmd_render_overlay(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let mut spec = SceneSpec::load(&a.spec).context("loading scene spec")?;
    if let Some(seed) = a.seed {
        spec.background_texture_seed = spec.background_texture_seed.wrapping_add(seed);
        for (k, s) in spec.sprites.iter_mut().enumerate() {
            s.texture_seed = s.texture_seed.wrapping_add(seed).wrapping_add(k as u64);
        }
    }
    let bundle = synth::make_scene(&spec)?;
    bundle.save_dir(&a.out)?;
    log::info!(
        "scene: {} frames at {}x{}, {} layers, {} ground-truth tracks",
        spec.frames,
        spec.width,
        spec.height,
        bundle.layers.len(),
        bundle.tracks.len()
    );
    manifest::write(
        &a.out,
        "synth",
        serde_json::json!({"spec": a.spec, "seed": a.seed}),
        &[&a.spec],
        &["frames", "gt.json", "scene.toml"],
        started,
        a.seed.unwrap_or(0),
    )?;
    Ok(())
}

/// Flow cache root: OMNITRACK_CACHE overrides <out>/cache.
fn cache_root(out: &std::path::Path) -> PathBuf {
    match std::env::var_os("OMNITRACK_CACHE") {
        Some(dir) => PathBuf::from(dir),
        None => out.join("cache"),
    }
}

fn cmd_flows(a: FlowsArgs) -> Result<()> {
    let started = Instant::now();
    let video = VideoSequence::load_dir(&a.video.join("frames")).context("loading frames")?;
    let dims = (video.height(), video.width());
    let n = video.len();
    std::fs::create_dir_all(&a.out)?;
    let cache = cache_root(&a.out);

    let cfg = IngestConfig {
        chain: !a.no_chain,
        rescue: !a.no_rescue,
        max_pair_gap: a.max_gap,
        ..Default::default()
    };

    let (flows, provider_name) = match a.provider {
        ProviderKind::Oracle => {
            let bundle =
                SyntheticBundle::load_dir(&a.video).context("oracle provider needs scene.toml")?;
            let mut noise = bundle.spec.noise;
            if let Some(s) = a.sigma {
                noise.sigma_px = s;
            }
            if let Some(f) = a.corrupt_fraction {
                noise.corrupt_fraction = f;
            }
            let mut provider = synth::OracleFlowProvider::new(&bundle, noise, a.seed);
            let flows =
                collect_pairwise_flows(n, dims, &mut provider, a.max_gap, Some(&cache))?;
            (flows, "oracle")
        }
        ProviderKind::Import => {
            let dir = a
                .import
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--provider import requires --import <dir>"))?;
            let mut provider = ImportProvider::new(dir);
            let flows =
                collect_pairwise_flows(n, dims, &mut provider, a.max_gap, Some(&cache))?;
            (flows, "import")
        }
    };

    let features = ColorPatchFeatures::new(&video);
    let feat_ref: Option<&dyn FeatureProvider> =
        if a.no_appearance { None } else { Some(&features) };
    let (omega, stats) = ingest(&flows, n, dims, feat_ref, &cfg)?;
    let omega_path = a.out.join("omega.omc");
    omega.save(&omega_path)?;
    log::info!(
        "{} pairs, {} direct ({} rescued), {} chained over {} pairs -> {}",
        stats.pairs,
        stats.direct_entries,
        stats.rescued_entries,
        stats.chained_entries,
        stats.chained_pairs,
        omega_path.display()
    );
    manifest::write(
        &a.out,
        "flows",
        serde_json::json!({
            "provider": provider_name,
            "video": a.video,
            "no_chain": a.no_chain,
            "no_rescue": a.no_rescue,
            "max_gap": a.max_gap,
            "stats": {
                "pairs": stats.pairs,
                "direct": stats.direct_entries,
                "rescued": stats.rescued_entries,
                "chained": stats.chained_entries,
            },
        }),
        &[&a.video.join("scene.toml")],
        &["omega.omc"],
        started,
        a.seed,
    )?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let video = VideoSequence::load_dir(&a.video.join("frames")).context("loading frames")?;
    let omega = omnitrack_core::flow::CorrespondenceSet::load(&a.flows.join("omega.omc"))
        .context("loading supervision set")?;

    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    let mut overrides = a.set.clone();
    if let Some(seed) = a.seed {
        overrides.push(format!("seed={seed}"));
    }
    if !overrides.is_empty() {
        cfg = cfg.with_overrides(&overrides)?;
    }

    std::fs::create_dir_all(&a.out)?;
    cfg.save(&a.out.join("train.toml"))?;

    let mut last_log = Instant::now();
    let mut progress = |p: omnitrack_core::train::Progress| {
        if p.step == 0 || last_log.elapsed().as_secs() >= 10 {
            log::info!(
                "step {}/{}: total {:.5} (flow {:.5}, pho {:.5}, reg {:.5})",
                p.step,
                p.total_steps,
                p.loss.total,
                p.loss.flow,
                p.loss.pho,
                p.loss.reg
            );
            last_log = Instant::now();
        }
    };
    let out = omnitrack_core::train::train::<f32>(
        &video,
        &omega,
        &cfg,
        &a.out,
        a.resume.as_deref(),
        Some(&mut progress),
    )?;
    log::info!(
        "finished {} steps, final loss {:.5}, checkpoint {}",
        out.steps_run,
        out.final_loss.total,
        out.checkpoint.display()
    );
    manifest::write(
        &a.out,
        "train",
        serde_json::json!({
            "video": a.video,
            "flows": a.flows,
            "config_hash": cfg.hash(),
            "steps": out.steps_run,
            "final_loss": out.final_loss.total,
        }),
        &[&a.flows.join("omega.omc")],
        &["checkpoint_final.ckpt", "loss.csv", "train.toml"],
        started,
        cfg.seed,
    )?;
    Ok(())
}

fn parse_points(a: &QueryArgs) -> Result<Vec<(usize, [f64; 2])>> {
    let mut out = Vec::new();
    if let Some(spec) = &a.points {
        for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
            let (frame, xy) = part
                .split_once(':')
                .with_context(|| format!("bad point '{part}', expected frame:x,y"))?;
            let (x, y) = xy
                .split_once(',')
                .with_context(|| format!("bad point '{part}', expected frame:x,y"))?;
            out.push((
                frame.trim().parse()?,
                [x.trim().parse()?, y.trim().parse()?],
            ));
        }
    }
    if let Some(file) = &a.points_file {
        for (ln, line) in std::fs::read_to_string(file)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                bail!("{}:{}: expected 'frame x y'", file.display(), ln + 1);
            }
            out.push((parts[0].parse()?, [parts[1].parse()?, parts[2].parse()?]));
        }
    }
    if out.is_empty() {
        bail!("no query points given (use --points or --points-file)");
    }
    Ok(out)
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let started = Instant::now();
    let loaded = checkpoint::load::<f32>(&a.ckpt)?;
    let (w, h, n) = loaded
        .video_dims
        .ok_or_else(|| anyhow::anyhow!("checkpoint carries no video dimensions"))?;
    let cfg = RenderConfig {
        samples_per_ray: a.samples,
        tau_vis: a.tau_vis,
        near: loaded.model.cfg.near,
        far: loaded.model.cfg.far,
    };
    let points = parse_points(&a)?;
    let mut rng = omnitrack_core::train::derive_rng(0, loaded.step, 77);
    let mut tracks = Vec::with_capacity(points.len());
    for (frame, xy) in points {
        if frame >= n {
            bail!("query frame {frame} out of range (video has {n} frames)");
        }
        let t = render::full_trajectory(
            &loaded.model,
            frame,
            xy,
            w,
            h,
            n,
            a.mode.into(),
            &cfg,
            &mut rng,
        )?;
        tracks.push(t);
    }
    track_io::write_jsonl(&tracks, &a.out)?;
    log::info!("wrote {} tracks to {}", tracks.len(), a.out.display());
    if let Some(dir) = a.out.parent() {
        manifest::write(
            dir,
            "query",
            serde_json::json!({"ckpt": a.ckpt, "tracks": tracks.len()}),
            &[&a.ckpt],
            &[a.out.file_name().unwrap().to_str().unwrap()],
            started,
            loaded.step as u64,
        )?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let preds_raw = track_io::read_jsonl(&a.pred)?;
    let (gts, gw, gh) = metrics::gt_io::read(&a.gt)?;
    if preds_raw.is_empty() {
        bail!("no predicted tracks in {}", a.pred.display());
    }
    let native = (
        preds_raw[0].width.max(gw.max(1)),
        preds_raw[0].height.max(gh.max(1)),
    );
    let preds: Vec<metrics::PredictedTrack> = preds_raw.iter().map(|t| t.into()).collect();
    let report = metrics::evaluate(&preds, &gts, native, a.resolution)?;

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    println!("metric            value");
    println!("aj                {}", fmt(report.aj));
    println!("delta_avg         {}", fmt(report.delta_avg));
    if let Some(pt) = report.per_threshold {
        for (k, thr) in metrics::THRESHOLDS.iter().enumerate() {
            println!("delta_{:<12} {:.4}", format!("{thr}px"), pt[k]);
        }
    }
    println!("oa                {:.4}", report.oa);
    println!("tc                {}", fmt(report.tc));
    println!(
        "tracks/frames     {}/{}",
        report.n_tracks, report.n_frames
    );

    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &a.out {
        std::fs::write(out, &json)?;
    }
    Ok(())
}

fn cmd_render_overlay(a: RenderOverlayArgs) -> Result<()> {
    let video = VideoSequence::load_dir(&a.video.join("frames")).context("loading frames")?;
    let tracks = track_io::read_jsonl(&a.tracks)?;
    std::fs::create_dir_all(&a.out)?;
    overlay::render_overlays(&video, &tracks, &a.out)?;
    if let Some(ckpt) = &a.ckpt {
        let loaded = checkpoint::load::<f32>(ckpt)?;
        overlay::render_depth_maps(&loaded.model, &video, &a.out)?;
    }
    log::info!("wrote {} overlay frames to {}", video.len(), a.out.display());
    Ok(())
}
