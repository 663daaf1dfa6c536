//! Adam with per-group learning rates, keyed by parameter name so optimizer
//! state survives checkpointing.

use std::collections::HashMap;

use crate::model::checkpoint::OptState;
use crate::model::{OmniMotionModel, ParamGroup, ParamVisitor, Real};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    pub step: usize,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn from_state(cfg: AdamConfig, state: OptState) -> Self {
        Adam {
            cfg,
            step: state.step,
            moments: state.moments,
        }
    }

    pub fn state(&self) -> OptState {
        OptState {
            step: self.step,
            moments: self.moments.clone(),
            error_maps: None,
        }
    }

    /// One update over all parameters; `lr_of` maps a group to its current
    /// (decayed) learning rate.
    pub fn update<R: Real>(
        &mut self,
        model: &mut OmniMotionModel<R>,
        lr_of: impl Fn(ParamGroup) -> f64,
    ) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.cfg.beta1.powf(t);
        let bias2 = 1.0 - self.cfg.beta2.powf(t);
        struct V<'a, F> {
            cfg: AdamConfig,
            moments: &'a mut HashMap<String, (Vec<f64>, Vec<f64>)>,
            lr_of: F,
            bias1: f64,
            bias2: f64,
        }
        impl<R: Real, F: Fn(ParamGroup) -> f64> ParamVisitor<R> for V<'_, F> {
            fn visit(&mut self, name: &str, group: ParamGroup, value: &mut [R], grad: &mut [R]) {
                let lr = (self.lr_of)(group);
                let (m, v) = self
                    .moments
                    .entry(name.to_string())
                    .or_insert_with(|| (vec![0.0; value.len()], vec![0.0; value.len()]));
                debug_assert_eq!(m.len(), value.len());
                for k in 0..value.len() {
                    let g = grad[k].to_f64_();
                    m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * g;
                    v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * g * g;
                    let mh = m[k] / self.bias1;
                    let vh = v[k] / self.bias2;
                    let upd = lr * mh / (vh.sqrt() + self.cfg.eps);
                    value[k] = value[k] - R::c(upd);
                }
            }
        }
        model.visit_params(&mut V {
            cfg: self.cfg,
            moments: &mut self.moments,
            lr_of,
            bias1,
            bias2,
        });
    }
}
