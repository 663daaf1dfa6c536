//! Training configuration: TOML file with sections, overridable per key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,

    pub total_steps: usize,
    /// Image pairs per step.
    pub pairs_per_step: usize,
    /// Total correspondences per step, split evenly across pairs.
    pub correspondences_per_step: usize,
    /// K ray samples per correspondence.
    pub samples_per_ray: usize,

    /// Photometric loss switch (off = the no-photometric ablation).
    pub photometric: bool,
    pub lambda_pho_max: f64,
    pub lambda_pho_ramp_steps: usize,
    pub lambda_reg: f64,
    pub lambda_pgrad: f64,
    pub lambda_zrange: f64,
    /// Photometric pixels: false samples Omega_p at the flow query pixels;
    /// true draws them uniformly over the frame (full-frame in expectation).
    pub photometric_uniform_pixels: bool,

    pub lr_field: f64,
    pub lr_mapping: f64,
    pub lr_latent: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,

    pub window_initial: usize,
    pub window_grow_every: usize,
    pub error_map_refresh_every: usize,
    /// Hard-example mining switch (off = the uniform-sampling ablation).
    pub hard_mining: bool,

    /// Fraction of rays whose samples enter the acceleration regularizer.
    pub reg_fraction: f64,

    pub checkpoint_every: usize,
    pub seed: u64,
    pub tau_vis: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            total_steps: 200_000,
            pairs_per_step: 8,
            correspondences_per_step: 1024,
            samples_per_ray: 32,
            photometric: true,
            lambda_pho_max: 10.0,
            lambda_pho_ramp_steps: 50_000,
            lambda_reg: 20.0,
            lambda_pgrad: 1.0,
            lambda_zrange: 1.0,
            photometric_uniform_pixels: false,
            lr_field: 3e-4,
            lr_mapping: 1e-4,
            lr_latent: 1e-3,
            lr_decay_every: 20_000,
            lr_decay_factor: 0.5,
            window_initial: 20,
            window_grow_every: 2_000,
            error_map_refresh_every: 20_000,
            hard_mining: true,
            reg_fraction: 1.0,
            checkpoint_every: 5_000,
            seed: 0,
            tau_vis: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_steps", self.total_steps as f64),
            ("pairs_per_step", self.pairs_per_step as f64),
            ("correspondences_per_step", self.correspondences_per_step as f64),
            ("samples_per_ray", self.samples_per_ray as f64),
            ("lr_field", self.lr_field),
            ("lr_mapping", self.lr_mapping),
            ("lr_latent", self.lr_latent),
            ("window_initial", self.window_initial as f64),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.reg_fraction) {
            return Err(Error::Config("reg_fraction must be in [0, 1]".into()));
        }
        if self.correspondences_per_step < self.pairs_per_step {
            return Err(Error::Config(
                "correspondences_per_step must be >= pairs_per_step".into(),
            ));
        }
        if self.lr_decay_factor <= 0.0 || self.lr_decay_factor > 1.0 {
            return Err(Error::Config("lr_decay_factor must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn correspondences_per_pair(&self) -> usize {
        (self.correspondences_per_step / self.pairs_per_step).max(1)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Apply dotted-path overrides like `total_steps=500` or
    /// `model.latent_dim=32`; values are parsed as TOML literals.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value =
            toml::Value::try_from(self).expect("config round-trips through toml");
        for ov in overrides {
            let (path, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            // parse the value as a toml literal; fall back to a string
            let parsed: toml::Value =
                match format!("v = {}", raw.trim()).parse::<toml::Table>() {
                    Ok(mut t) => t.remove("v").unwrap(),
                    Err(_) => toml::Value::String(raw.trim().to_string()),
                };
            let mut cur = &mut doc;
            let parts: Vec<&str> = path.trim().split('.').collect();
            for (k, part) in parts.iter().enumerate() {
                if k == parts.len() - 1 {
                    let table = cur.as_table_mut().ok_or_else(|| {
                        Error::Config(format!("'{path}': {part} is not a table"))
                    })?;
                    if !table.contains_key(*part) {
                        return Err(Error::Config(format!("unknown config key '{path}'")));
                    }
                    table.insert(part.to_string(), parsed.clone());
                } else {
                    cur = cur
                        .as_table_mut()
                        .ok_or_else(|| {
                            Error::Config(format!("'{path}': {part} is not a table"))
                        })?
                        .get_mut(*part)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "unknown config section '{part}' in '{path}'"
                            ))
                        })?;
                }
            }
        }
        let cfg: TrainConfig = doc
            .try_into()
            .map_err(|e| Error::Config(format!("override produced invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable hash of the serialized config, recorded in checkpoints and
    /// manifests.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_overrides() {
        let cfg = TrainConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        cfg.save(&path).unwrap();
        let back = TrainConfig::load(&path).unwrap();
        assert_eq!(back, cfg);

        let over = cfg
            .with_overrides(&[
                "total_steps=500".into(),
                "model.latent_dim=32".into(),
                "photometric=false".into(),
            ])
            .unwrap();
        assert_eq!(over.total_steps, 500);
        assert_eq!(over.model.latent_dim, 32);
        assert!(!over.photometric);
        assert_ne!(over.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let cfg = TrainConfig::default();
        assert!(cfg.with_overrides(&["no_such_key=1".into()]).is_err());
        assert!(cfg.with_overrides(&["bad-format".into()]).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.reg_fraction = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lr_field = 0.0;
        assert!(cfg.validate().is_err());
    }
}
