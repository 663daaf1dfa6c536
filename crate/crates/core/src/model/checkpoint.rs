//! Checkpoint I/O: all parameter arrays plus training step, config hash and
//! optimizer state, stored in the named-array container format.

use std::collections::HashMap;
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};

use super::params::{ParamGroup, ParamVisitor, Real};
use super::{ModelConfig, OmniMotionModel};

pub const CHECKPOINT_KIND: &str = "omnitrack-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Extra per-parameter optimizer state stored alongside the weights.
#[derive(Debug, Default, Clone)]
pub struct OptState {
    pub step: usize,
    pub moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
    /// Hard-mining error maps as of their last refresh; derived state that
    /// must ride along for resumed runs to be bit-identical.
    pub error_maps: Option<ErrorMapState>,
}

#[derive(Debug, Clone)]
pub struct ErrorMapState {
    pub refreshed_at: usize,
    pub height: usize,
    pub width: usize,
    pub maps: Vec<Vec<f32>>,
}

struct Collect<'a> {
    container: &'a mut Container,
}

impl<R: Real> ParamVisitor<R> for Collect<'_> {
    fn visit(&mut self, name: &str, _g: ParamGroup, value: &mut [R], _grad: &mut [R]) {
        let values: Vec<f64> = value.iter().map(|v| v.to_f64_()).collect();
        self.container
            .insert_f64(format!("param.{name}"), &[values.len()], &values);
    }
}

struct Restore<'a> {
    container: &'a Container,
    missing: Vec<String>,
}

impl<R: Real> ParamVisitor<R> for Restore<'_> {
    fn visit(&mut self, name: &str, _g: ParamGroup, value: &mut [R], _grad: &mut [R]) {
        let key = format!("param.{name}");
        match self.container.get(&key).map(|e| e.as_f64()) {
            Some(Ok(data)) if data.len() == value.len() => {
                for (v, d) in value.iter_mut().zip(data) {
                    *v = R::c(d);
                }
            }
            _ => self.missing.push(key),
        }
    }
}

pub fn save<R: Real>(
    model: &mut OmniMotionModel<R>,
    step: usize,
    config_hash: &str,
    opt: Option<&OptState>,
    video_dims: Option<(usize, usize, usize)>,
    path: &Path,
) -> Result<()> {
    let meta = serde_json::json!({
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "step": step,
        "config_hash": config_hash,
        "model_config": serde_json::to_value(&model.cfg).expect("config serializes"),
        "video": video_dims.map(|(w, h, n)| serde_json::json!({
            "width": w, "height": h, "frames": n,
        })),
    });
    let mut container = Container::new(meta);
    model.visit_params(&mut Collect {
        container: &mut container,
    });
    if let Some(opt) = opt {
        let mut names: Vec<&String> = opt.moments.keys().collect();
        names.sort();
        for name in names {
            let (m, v) = &opt.moments[name];
            container.insert_f64(format!("adam.m.{name}"), &[m.len()], m);
            container.insert_f64(format!("adam.v.{name}"), &[v.len()], v);
        }
        if let Some(em) = &opt.error_maps {
            container.meta["error_maps_refreshed_at"] =
                serde_json::json!(em.refreshed_at);
            for (f, map) in em.maps.iter().enumerate() {
                container.insert_f32(
                    format!("errmap.{f:05}"),
                    &[em.height, em.width],
                    map,
                );
            }
        }
    }
    container.save(path)
}

pub struct Loaded<R> {
    pub model: OmniMotionModel<R>,
    pub step: usize,
    pub config_hash: String,
    pub opt: OptState,
    /// (width, height, frames) of the video this model was optimized on.
    pub video_dims: Option<(usize, usize, usize)>,
}

pub fn load<R: Real>(path: &Path) -> Result<Loaded<R>> {
    let container = Container::load(path)?;
    if container.meta["kind"] != CHECKPOINT_KIND {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let cfg: ModelConfig = serde_json::from_value(container.meta["model_config"].clone())
        .map_err(|e| Error::format(path, format!("bad model config: {e}")))?;
    let step = container.meta["step"].as_u64().unwrap_or(0) as usize;
    let config_hash = container.meta["config_hash"]
        .as_str()
        .unwrap_or_default()
        .to_string();

    let mut model = OmniMotionModel::<R>::init(&cfg, 0);
    let mut restore = Restore {
        container: &container,
        missing: Vec::new(),
    };
    model.visit_params(&mut restore);
    if !restore.missing.is_empty() {
        return Err(Error::format(
            path,
            format!("missing/mismatched parameters: {:?}", restore.missing),
        ));
    }

    let mut opt = OptState {
        step,
        ..Default::default()
    };
    let mut maps = Vec::new();
    let mut map_dims = (0usize, 0usize);
    for name in container.names() {
        if let Some(pname) = name.strip_prefix("adam.m.") {
            let m = container.get(name).unwrap().as_f64()?;
            let v = container
                .get(&format!("adam.v.{pname}"))
                .ok_or_else(|| Error::format(path, format!("missing adam.v for {pname}")))?
                .as_f64()?;
            opt.moments.insert(pname.to_string(), (m, v));
        } else if name.starts_with("errmap.") {
            let e = container.get(name).unwrap();
            map_dims = (e.dims[0], e.dims[1]);
            maps.push(e.as_f32()?);
        }
    }
    if !maps.is_empty() {
        opt.error_maps = Some(ErrorMapState {
            refreshed_at: container.meta["error_maps_refreshed_at"]
                .as_u64()
                .unwrap_or(0) as usize,
            height: map_dims.0,
            width: map_dims.1,
            maps,
        });
    }

    let video_dims = container.meta["video"].as_object().map(|v| {
        (
            v["width"].as_u64().unwrap_or(0) as usize,
            v["height"].as_u64().unwrap_or(0) as usize,
            v["frames"].as_u64().unwrap_or(0) as usize,
        )
    });

    Ok(Loaded {
        model,
        step,
        config_hash,
        opt,
        video_dims,
    })
}
