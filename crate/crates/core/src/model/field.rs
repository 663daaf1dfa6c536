//! Canonical density/color field: contraction, coordinate network, and the
//! softplus/sigmoid output heads that enforce sigma >= 0 and color in [0,1].

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::contract::{contract, contract_backward};
use super::gabor::{CoordNet, CoordNetTrace};
use super::params::{ParamGroup, ParamVisitor, Parameterized, Real};

#[derive(Debug, Clone)]
pub struct CanonicalField<R> {
    pub net: CoordNet<R>,
    /// Added to the raw density channel before softplus; controls how opaque
    /// the volume starts out.
    pub sigma_bias: R,
}

#[derive(Debug)]
pub struct FieldTrace<R> {
    u: Array2<R>,
    net: CoordNetTrace<R>,
    raw: Array2<R>,
    pub sigma: Array1<R>,
    pub color: Array2<R>,
}

fn softplus<R: Real>(x: R) -> R {
    // ln(1 + e^x), overflow-safe
    if x > R::c(20.0) {
        x
    } else {
        (R::one() + x.exp()).ln()
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        (R::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

impl<R: Real> CanonicalField<R> {
    pub fn new(
        rng: &mut impl Rng,
        hidden: usize,
        n_layers: usize,
        freq_scale: f64,
        use_gabor: bool,
        sigma_bias: f64,
    ) -> Self {
        // contracted canonical coordinates live inside radius 2
        let net = if use_gabor {
            CoordNet::gabor(rng, 3, hidden, n_layers, 4, freq_scale, 2.0)
        } else {
            CoordNet::pe_mlp(rng, 3, hidden, n_layers, 4, 6)
        };
        CanonicalField {
            net,
            sigma_bias: R::c(sigma_bias),
        }
    }

    /// Density and color for a batch of canonical points (contraction applied
    /// internally). Returns a trace for the backward pass when requested.
    pub fn forward(
        &self,
        u: &Array2<R>,
        want_trace: bool,
    ) -> (Array1<R>, Array2<R>, Option<FieldTrace<R>>) {
        let v = contract(u);
        let mut net_trace = None;
        let raw = self
            .net
            .forward(&v, want_trace.then_some(&mut net_trace));
        let n = raw.dim().0;
        let mut sigma = Array1::zeros(n);
        let mut color = Array2::zeros((n, 3));
        for r in 0..n {
            sigma[r] = softplus(raw[(r, 0)] + self.sigma_bias);
            for c in 0..3 {
                color[(r, c)] = sigmoid(raw[(r, c + 1)]);
            }
        }
        let trace = want_trace.then(|| FieldTrace {
            u: u.clone(),
            net: net_trace.expect("trace requested"),
            raw,
            sigma: sigma.clone(),
            color: color.clone(),
        });
        (sigma, color, trace)
    }

    /// Backward from (d sigma, d color) to the gradient w.r.t. the
    /// uncontracted canonical points.
    pub fn backward(
        &mut self,
        trace: &FieldTrace<R>,
        g_sigma: &Array1<R>,
        g_color: &Array2<R>,
    ) -> Array2<R> {
        let n = trace.raw.dim().0;
        let mut g_raw = Array2::zeros((n, 4));
        for r in 0..n {
            // softplus' = sigmoid
            g_raw[(r, 0)] = g_sigma[r] * sigmoid(trace.raw[(r, 0)] + self.sigma_bias);
            for c in 0..3 {
                let y = trace.color[(r, c)];
                g_raw[(r, c + 1)] = g_color[(r, c)] * y * (R::one() - y);
            }
        }
        let gv = self.net.backward(&trace.net, &g_raw);
        contract_backward(&trace.u, &gv)
    }

    pub fn color_at(trace: &FieldTrace<R>) -> ndarray::ArrayView2<'_, R> {
        trace.color.slice(s![.., ..])
    }
}

impl<R: Real> Parameterized<R> for CanonicalField<R> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        self.net.visit_params(&format!("{prefix}.net"), group, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outputs_satisfy_range_invariants_under_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..5 {
            let field =
                CanonicalField::<f64>::new(&mut rng, 16, 3, 4.0, trial % 2 == 0, -0.5);
            let u = Array2::from_shape_fn((20_000, 3), |_| rng.gen_range(-30.0..30.0));
            let (sigma, color, _) = field.forward(&u, false);
            for &s in sigma.iter() {
                assert!(s >= 0.0 && s.is_finite());
            }
            for &c in color.iter() {
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn query_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let field = CanonicalField::<f64>::new(&mut rng, 8, 2, 4.0, true, 0.0);
        let u = ndarray::array![[0.3, -0.8, 1.4]];
        let (s1, c1, _) = field.forward(&u, false);
        let (s2, c2, _) = field.forward(&u, false);
        assert_eq!(s1, s2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn backward_matches_finite_differences_through_contraction() {
        use crate::model::gradcheck::grad_check_input;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let field = CanonicalField::<f64>::new(&mut rng, 8, 2, 2.0, true, 0.3);
        let u = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        grad_check_input(
            &u,
            |u| {
                let (s, c, _) = field.forward(u, false);
                s.sum() + c.iter().map(|v| v * v).sum::<f64>()
            },
            |u| {
                let mut f = field.clone();
                let (s, c, tr) = f.forward(u, true);
                let g_sigma = Array1::from_elem(s.dim(), 1.0);
                let g_color = c.mapv(|v| 2.0 * v);
                f.backward(&tr.unwrap(), &g_sigma, &g_color)
            },
            1e-6,
            1e-5,
        );
    }
}
