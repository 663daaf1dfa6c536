//! Run manifest: config snapshot, seed, input hashes, artifact paths and
//! timings, enough to reproduce a run with the same seed.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use sha2::{Digest, Sha256};

fn hash_path(path: &Path) -> Option<String> {
    fn update(h: &mut Sha256, path: &Path) -> std::io::Result<()> {
        if path.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for e in entries {
                update(h, &e)?;
            }
        } else {
            h.update(path.file_name().unwrap_or_default().as_encoded_bytes());
            h.update(std::fs::read(path)?);
        }
        Ok(())
    }
    let mut h = Sha256::new();
    update(&mut h, path).ok()?;
    Some(
        h.finalize()
            .iter()
            .take(16)
            .map(|b| format!("{b:02x}"))
            .collect(),
    )
}

pub fn write(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    inputs: &[&Path],
    artifacts: &[&str],
    started: Instant,
    seed: u64,
) -> Result<()> {
    let input_hashes: serde_json::Map<String, serde_json::Value> = inputs
        .iter()
        .filter_map(|p| {
            hash_path(p).map(|h| (p.display().to_string(), serde_json::Value::String(h)))
        })
        .collect();
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "input_hashes": input_hashes,
        "artifacts": artifacts,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}
