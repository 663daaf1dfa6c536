//! Per-frame latent code generator: normalized frame time -> psi.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::gabor::{CoordNet, CoordNetTrace};
use super::params::{ParamGroup, ParamVisitor, Parameterized, Real};

#[derive(Debug, Clone)]
pub struct LatentGenerator<R> {
    pub net: CoordNet<R>,
    pub dim: usize,
}

impl<R: Real> LatentGenerator<R> {
    pub fn new(
        rng: &mut impl Rng,
        dim: usize,
        hidden: usize,
        n_layers: usize,
        freq_scale: f64,
        use_gabor: bool,
    ) -> Self {
        let net = if use_gabor {
            CoordNet::gabor(rng, 1, hidden, n_layers, dim, freq_scale, 1.0)
        } else {
            CoordNet::pe_mlp(rng, 1, hidden, n_layers, dim, 6)
        };
        LatentGenerator { net, dim }
    }

    /// Latent codes for a batch of times (N x 1 input, N x dim output).
    pub fn forward(
        &self,
        times: &Array2<R>,
        trace: Option<&mut Option<CoordNetTrace<R>>>,
    ) -> Array2<R> {
        self.net.forward(times, trace)
    }

    /// Single latent code for one normalized time.
    pub fn code(&self, t: R) -> Array1<R> {
        let input = Array2::from_shape_vec((1, 1), vec![t]).unwrap();
        let out = self.net.forward(&input, None);
        out.row(0).to_owned()
    }

    pub fn backward(&mut self, trace: &CoordNetTrace<R>, g_psi: &Array2<R>) {
        self.net.backward(trace, g_psi);
    }
}

impl<R: Real> Parameterized<R> for LatentGenerator<R> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        self.net.visit_params(&format!("{prefix}.net"), group, v);
    }
}
