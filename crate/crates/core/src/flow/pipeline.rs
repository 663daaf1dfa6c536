//! Flow collection and the full ingest pipeline producing the supervision
//! set.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use super::filter::{
    cycle_filter, occlusion_rescue, APPEARANCE_MIN_GAP, DEFAULT_APPEARANCE_THRESHOLD,
    DEFAULT_CYCLE_THRESHOLD, RESCUE_MAX_GAP,
};
use super::{
    appearance_filter, cache, chain::chain_pair, CorrEntry, CorrespondenceSet, FeatureProvider,
    FlowField, FlowProvider, PairEntries,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub cycle_threshold: f32,
    pub appearance_threshold: f32,
    /// Appearance check applies when |i - j| > this.
    pub appearance_min_gap: usize,
    /// Occlusion-rescue bypass (on for RAFT-style providers, off for
    /// TAP-Net-style ones).
    pub rescue: bool,
    /// Rescue applies when |i - j| < this.
    pub rescue_max_gap: usize,
    pub chain: bool,
    /// Two-hop chaining kicks in when direct surviving density is below this
    /// fraction of the pixel count.
    pub chain_density_trigger: f64,
    /// Collect only pairs with |i - j| <= this (None = exhaustive).
    pub max_pair_gap: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            cycle_threshold: DEFAULT_CYCLE_THRESHOLD,
            appearance_threshold: DEFAULT_APPEARANCE_THRESHOLD,
            appearance_min_gap: APPEARANCE_MIN_GAP,
            rescue: true,
            rescue_max_gap: RESCUE_MAX_GAP,
            chain: true,
            chain_density_trigger: 0.5,
            max_pair_gap: None,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct IngestStats {
    pub pairs: usize,
    pub direct_entries: usize,
    pub rescued_entries: usize,
    pub chained_entries: usize,
    pub chained_pairs: usize,
}

/// Exhaustively collect pairwise flows (optionally gap-capped) and cache them
/// to disk. For each base frame, targets are visited in increasing distance
/// and the previous target's field is passed as initialization when the
/// provider supports warm starts. Rerunning over an existing cache reuses it.
pub fn collect_pairwise_flows(
    n_frames: usize,
    dims: (usize, usize),
    provider: &mut dyn FlowProvider,
    max_gap: Option<usize>,
    cache_dir: Option<&Path>,
) -> Result<HashMap<(usize, usize), FlowField>> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (h, w) = dims;
    let gap_ok = |i: usize, j: usize| match max_gap {
        Some(g) => i.abs_diff(j) <= g,
        None => true,
    };
    let mut flows = HashMap::new();
    for i in 0..n_frames {
        // ascending then descending targets, warm-started from the previous
        for dir in [1isize, -1] {
            let mut prev: Option<FlowField> = None;
            let mut j = i as isize + dir;
            while j >= 0 && (j as usize) < n_frames {
                let ju = j as usize;
                if !gap_ok(i, ju) {
                    break;
                }
                let cached = cache_dir.map(|d| cache::pair_path(d, i, ju));
                let field = match &cached {
                    Some(p) if p.exists() => cache::read(p)?,
                    _ => {
                        let f = provider.flow(i, ju, prev.as_ref())?;
                        if (f.height(), f.width()) != (h, w) {
                            return Err(Error::Resolution {
                                expected: (h, w),
                                got: (f.height(), f.width()),
                            });
                        }
                        if let Some(p) = &cached {
                            cache::write(&f, p)?;
                        }
                        f
                    }
                };
                prev = Some(field.clone());
                flows.insert((i, ju), field);
                j += dir;
            }
        }
    }
    Ok(flows)
}

/// Run the full filter pipeline over collected flows and build the
/// supervision set.
pub fn ingest(
    flows: &HashMap<(usize, usize), FlowField>,
    n_frames: usize,
    dims: (usize, usize),
    features: Option<&dyn FeatureProvider>,
    cfg: &IngestConfig,
) -> Result<(CorrespondenceSet, IngestStats)> {
    let (h, w) = dims;
    let mut stats = IngestStats::default();
    let mut set = CorrespondenceSet::new(w, h, n_frames);

    // cache features lazily per frame
    let mut feature_cache: HashMap<usize, super::FeatureMap> = HashMap::new();
    let feat =
        |frame: usize, cache: &mut HashMap<usize, super::FeatureMap>| -> Result<()> {
            if !cache.contains_key(&frame) {
                let provider = features.ok_or_else(|| {
                    Error::InvalidInput(
                        "appearance check requested but no feature provider given".into(),
                    )
                })?;
                cache.insert(frame, provider.features(frame)?);
            }
            Ok(())
        };

    let mut keep_masks: HashMap<(usize, usize), Array2<bool>> = HashMap::new();
    let mut ordered_pairs: Vec<(usize, usize)> = flows.keys().copied().collect();
    ordered_pairs.sort();

    for &(i, j) in &ordered_pairs {
        let fwd = &flows[&(i, j)];
        let bwd = flows.get(&(j, i)).ok_or_else(|| Error::Provider {
            i: j,
            j: i,
            reason: "missing backward field for cycle check".into(),
        })?;
        let mut keep = cycle_filter(fwd, bwd, cfg.cycle_threshold)?;

        let gap = i.abs_diff(j);
        if gap > cfg.appearance_min_gap && features.is_some() {
            feat(i, &mut feature_cache)?;
            feat(j, &mut feature_cache)?;
            let ok = appearance_filter(
                &feature_cache[&i],
                &feature_cache[&j],
                fwd,
                cfg.appearance_threshold,
            )?;
            keep.zip_mut_with(&ok, |k, &o| *k = *k && o);
        }

        let rescued = if cfg.rescue && gap < cfg.rescue_max_gap {
            occlusion_rescue(fwd, bwd, fwd, gap, cfg.cycle_threshold)?
        } else {
            Array2::from_elem((h, w), false)
        };

        let mut entries = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let is_rescued = rescued[(y, x)];
                if !keep[(y, x)] && !is_rescued {
                    continue;
                }
                let f = fwd.at(x, y);
                let p_j = [x as f32 + f[0], y as f32 + f[1]];
                if !crate::video::in_bounds(p_j[0] as f64, p_j[1] as f64, w, h) {
                    continue;
                }
                entries.push(CorrEntry {
                    p_i: [x as u16, y as u16],
                    p_j,
                    occlusion_rescued: is_rescued,
                    chained: false,
                });
                stats.direct_entries += 1;
                if is_rescued {
                    stats.rescued_entries += 1;
                }
            }
        }
        keep_masks.insert((i, j), keep);
        set.push_pair(PairEntries { i, j, entries });
        stats.pairs += 1;
    }

    if cfg.chain {
        chain_augment(flows, &keep_masks, &mut set, cfg, &mut stats)?;
    }

    if set.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    Ok((set, stats))
}

/// Two-hop chaining through the midpoint frame for pairs whose direct
/// supervision density fell below the trigger.
fn chain_augment(
    flows: &HashMap<(usize, usize), FlowField>,
    keep_masks: &HashMap<(usize, usize), Array2<bool>>,
    set: &mut CorrespondenceSet,
    cfg: &IngestConfig,
    stats: &mut IngestStats,
) -> Result<()> {
    let pixels = (set.width * set.height) as f64;
    for k in 0..set.pairs.len() {
        let (i, j) = (set.pairs[k].i, set.pairs[k].j);
        if i.abs_diff(j) < 2 {
            continue;
        }
        let density = set.pairs[k].entries.len() as f64 / pixels;
        if density >= cfg.chain_density_trigger {
            continue;
        }
        let m = (i + j) / 2;
        let (Some(f_im), Some(f_mj)) = (flows.get(&(i, m)), flows.get(&(m, j))) else {
            continue;
        };
        let (Some(k_im), Some(k_mj)) = (keep_masks.get(&(i, m)), keep_masks.get(&(m, j)))
        else {
            continue;
        };
        let chained = chain_pair(f_im, k_im, f_mj, k_mj)?;
        if chained.is_empty() {
            continue;
        }
        let existing: std::collections::HashSet<[u16; 2]> = set.pairs[k]
            .entries
            .iter()
            .map(|e| e.p_i)
            .collect();
        let mut added = 0;
        for c in chained {
            if existing.contains(&c.p_i) {
                continue;
            }
            set.pairs[k].entries.push(CorrEntry {
                p_i: c.p_i,
                p_j: c.p_j,
                occlusion_rescued: false,
                chained: true,
            });
            added += 1;
        }
        if added > 0 {
            stats.chained_entries += added;
            stats.chained_pairs += 1;
        }
    }
    Ok(())
}
