//! Dense layers and the small ReLU MLP used by coupling-layer conditioners.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::params::{uniform, ParamGroup, ParamVisitor, Parameterized, Real};

/// Fully connected layer, weights stored input-major (in x out).
#[derive(Debug, Clone)]
pub struct Linear<R> {
    pub w: Array2<R>,
    pub b: Array1<R>,
    pub gw: Array2<R>,
    pub gb: Array1<R>,
}

impl<R: Real> Linear<R> {
    /// Kaiming-style uniform init.
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| uniform::<R>(rng, limit));
        Linear {
            w,
            b: Array1::zeros(fan_out),
            gw: Array2::zeros((fan_in, fan_out)),
            gb: Array1::zeros(fan_out),
        }
    }

    /// All-zero init; makes the enclosing block the identity map at start.
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
            gw: Array2::zeros((fan_in, fan_out)),
            gb: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<R>) -> Array2<R> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<R>, gy: &Array2<R>) -> Array2<R> {
        self.gw += &x.t().dot(gy);
        self.gb += &gy.sum_axis(Axis(0));
        gy.dot(&self.w.t())
    }

    fn visit(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        v.visit(
            &format!("{prefix}.w"),
            group,
            self.w.as_slice_mut().unwrap(),
            self.gw.as_slice_mut().unwrap(),
        );
        v.visit(
            &format!("{prefix}.b"),
            group,
            self.b.as_slice_mut().unwrap(),
            self.gb.as_slice_mut().unwrap(),
        );
    }
}

impl<R: Real> Parameterized<R> for Linear<R> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        self.visit(prefix, group, v);
    }
}

/// Multi-layer perceptron with ReLU between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp<R> {
    pub layers: Vec<Linear<R>>,
}

/// Cached activations for one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace<R> {
    /// Input to each linear layer.
    pub xs: Vec<Array2<R>>,
    /// Pre-activation output of each linear layer.
    pub zs: Vec<Array2<R>>,
}

impl<R> Default for MlpTrace<R> {
    fn default() -> Self {
        MlpTrace {
            xs: Vec::new(),
            zs: Vec::new(),
        }
    }
}

impl<R: Real> Mlp<R> {
    /// `n_layers` weight layers, hidden width `hidden`, last layer zero-init
    /// when `zero_last` is set.
    pub fn new(
        rng: &mut impl Rng,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        n_layers: usize,
        zero_last: bool,
    ) -> Self {
        assert!(n_layers >= 1);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let fi = if l == 0 { in_dim } else { hidden };
            let fo = if l == n_layers - 1 { out_dim } else { hidden };
            if l == n_layers - 1 && zero_last {
                layers.push(Linear::zeros(fi, fo));
            } else {
                layers.push(Linear::new(rng, fi, fo));
            }
        }
        Mlp { layers }
    }

    pub fn forward(&self, x: &Array2<R>, mut trace: Option<&mut MlpTrace<R>>) -> Array2<R> {
        if let Some(t) = trace.as_deref_mut() {
            t.xs.clear();
            t.zs.clear();
        }
        let n = self.layers.len();
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&cur);
            if let Some(t) = trace.as_deref_mut() {
                t.xs.push(cur);
                t.zs.push(z.clone());
            }
            cur = if l + 1 < n {
                z.mapv(|v| if v > R::zero() { v } else { R::zero() })
            } else {
                z
            };
        }
        cur
    }

    pub fn backward(&mut self, trace: &MlpTrace<R>, gy: &Array2<R>) -> Array2<R> {
        let n = self.layers.len();
        let mut g = gy.clone();
        for l in (0..n).rev() {
            let gx = self.layers[l].backward(&trace.xs[l], &g);
            g = gx;
            if l > 0 {
                // gate by the ReLU applied after layer l-1
                g.zip_mut_with(&trace.zs[l - 1], |gv, &z| {
                    if z <= R::zero() {
                        *gv = R::zero();
                    }
                });
            }
        }
        g
    }
}

impl<R: Real> Parameterized<R> for Mlp<R> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("{prefix}.l{l}"), group, v);
        }
    }
}
