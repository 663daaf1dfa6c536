//! The OmniMotion representation: per-frame latent codes, a shared invertible
//! mapping network between local and canonical space, and a canonical
//! density/color field.

pub mod checkpoint;
pub mod contract;
pub mod coupling;
pub mod encoding;
pub mod field;
pub mod gabor;
pub mod gradcheck;
pub mod latent;
pub mod linear;
pub mod params;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
pub use contract::contract;
pub use coupling::{broadcast_psi, CouplingStack, StackTrace};
pub use encoding::positional_encode;
pub use field::CanonicalField;
pub use latent::LatentGenerator;
pub use params::{ParamGroup, ParamVisitor, Parameterized, Real, ZeroGrads};

/// Architecture hyperparameters. Defaults are the full-scale configuration;
/// reduced settings are provided through config files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub coupling_layers: usize,
    pub coupling_hidden: usize,
    pub coupling_mlp_layers: usize,
    pub n_freq: usize,
    pub latent_dim: usize,
    pub latent_hidden: usize,
    pub latent_layers: usize,
    pub latent_freq_scale: f64,
    pub field_hidden: usize,
    pub field_layers: usize,
    pub field_freq_scale: f64,
    /// Gabor (multiplicative filter) backbone; false selects the plain
    /// positionally encoded MLP fallback.
    pub use_gabor: bool,
    pub near: f64,
    pub far: f64,
    /// Initial bias on the density head (pre-softplus).
    pub sigma_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            coupling_layers: 6,
            coupling_hidden: 256,
            coupling_mlp_layers: 3,
            n_freq: 4,
            latent_dim: 128,
            latent_hidden: 256,
            latent_layers: 2,
            latent_freq_scale: 8.0,
            field_hidden: 512,
            field_layers: 3,
            field_freq_scale: 8.0,
            use_gabor: true,
            near: 0.0,
            far: 2.0,
            sigma_bias: -1.0,
        }
    }
}

impl ModelConfig {
    /// Micro configuration used by gradient verification.
    pub fn micro() -> Self {
        ModelConfig {
            coupling_layers: 2,
            coupling_hidden: 16,
            coupling_mlp_layers: 3,
            n_freq: 2,
            latent_dim: 8,
            latent_hidden: 16,
            latent_layers: 2,
            latent_freq_scale: 4.0,
            field_hidden: 16,
            field_layers: 2,
            field_freq_scale: 4.0,
            use_gabor: true,
            near: 0.0,
            far: 2.0,
            sigma_bias: -0.5,
        }
    }
}

/// Full parameter set of the representation.
#[derive(Debug, Clone)]
pub struct OmniMotionModel<R> {
    pub cfg: ModelConfig,
    pub latent: LatentGenerator<R>,
    pub mapping: CouplingStack<R>,
    pub field: CanonicalField<R>,
}

impl<R: Real> OmniMotionModel<R> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latent = LatentGenerator::new(
            &mut rng,
            cfg.latent_dim,
            cfg.latent_hidden,
            cfg.latent_layers,
            cfg.latent_freq_scale,
            cfg.use_gabor,
        );
        let mapping = CouplingStack::new(
            &mut rng,
            cfg.coupling_layers,
            cfg.latent_dim,
            cfg.coupling_hidden,
            cfg.coupling_mlp_layers,
            cfg.n_freq,
        );
        let field = CanonicalField::new(
            &mut rng,
            cfg.field_hidden,
            cfg.field_layers,
            cfg.field_freq_scale,
            cfg.use_gabor,
            cfg.sigma_bias,
        );
        OmniMotionModel {
            cfg: cfg.clone(),
            latent,
            mapping,
            field,
        }
    }

    /// Latent code for a normalized frame time.
    pub fn latent_code(&self, t: f64) -> Array1<R> {
        self.latent.code(R::c(t))
    }

    /// Local frame points -> canonical points (batch, shared latent row).
    pub fn map_to_canonical(&self, x: &Array2<R>, psi: &Array1<R>) -> Result<Array2<R>> {
        let big = broadcast_psi(psi, x.dim().0);
        self.mapping.forward(x, &big.view(), None)
    }

    /// Canonical points -> local frame points.
    pub fn map_from_canonical(&self, u: &Array2<R>, psi: &Array1<R>) -> Result<Array2<R>> {
        let big = broadcast_psi(psi, u.dim().0);
        self.mapping.inverse(u, &big.view(), None)
    }

    /// Frame i points -> frame j points through canonical space.
    pub fn map_local_to_local(
        &self,
        x: &Array2<R>,
        psi_i: &Array1<R>,
        psi_j: &Array1<R>,
    ) -> Result<Array2<R>> {
        let u = self.map_to_canonical(x, psi_i)?;
        self.map_from_canonical(&u, psi_j)
    }

    /// Density and color at canonical points (contraction internal).
    pub fn query_canonical(&self, u: &Array2<R>) -> (Array1<R>, Array2<R>) {
        let (sigma, color, _) = self.field.forward(u, false);
        (sigma, color)
    }

    pub fn visit_params(&mut self, v: &mut dyn ParamVisitor<R>) {
        self.latent.visit_params("latent", ParamGroup::Latent, v);
        self.mapping.visit_params("mapping", ParamGroup::Mapping, v);
        self.field.visit_params("field", ParamGroup::Field, v);
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut ZeroGrads);
    }

    pub fn param_count(&mut self) -> usize {
        let mut idx = params::ParamIndex::default();
        self.visit_params(&mut idx);
        idx.entries.iter().map(|e| e.2).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomize<R: Real>(model: &mut OmniMotionModel<R>, seed: u64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        struct Randomize<'a> {
            rng: &'a mut ChaCha8Rng,
        }
        impl<R: Real> ParamVisitor<R> for Randomize<'_> {
            fn visit(&mut self, name: &str, _g: ParamGroup, value: &mut [R], _grad: &mut [R]) {
                // keep filter params at their init; perturb linear weights
                if name.ends_with(".w") || name.ends_with(".b") {
                    for v in value.iter_mut() {
                        *v = *v + R::c(self.rng.gen_range(-0.2..0.2));
                    }
                }
            }
        }
        model.visit_params(&mut Randomize { rng: &mut rng });
    }

    #[test]
    fn identity_initialized_model_maps_identically() {
        let model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 1);
        let psi_i = model.latent_code(0.0);
        let psi_j = model.latent_code(1.0);
        let x = ndarray::array![[0.5, -0.5, 1.0], [0.0, 0.0, 0.0]];
        let y = model.map_local_to_local(&x, &psi_i, &psi_j).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bijectivity_after_randomization() {
        let mut model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 2);
        randomize(&mut model, 3);
        let psi = model.latent_code(0.3);
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((256, 3), |_| rng.gen_range(-1.0..1.0));
        let u = model.map_to_canonical(&x, &psi).unwrap();
        let back = model.map_from_canonical(&u, &psi).unwrap();
        let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn composition_consistency_across_frames() {
        let mut model = OmniMotionModel::<f64>::init(&ModelConfig::micro(), 5);
        randomize(&mut model, 6);
        let pi = model.latent_code(0.0);
        let pj = model.latent_code(0.5);
        let pk = model.latent_code(1.0);
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((64, 3), |_| rng.gen_range(-1.0..1.0));
        let via = model
            .map_local_to_local(
                &model.map_local_to_local(&x, &pi, &pj).unwrap(),
                &pj,
                &pk,
            )
            .unwrap();
        let direct = model.map_local_to_local(&x, &pi, &pk).unwrap();
        let err = (&via - &direct).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-4, "{err}");
    }
}
