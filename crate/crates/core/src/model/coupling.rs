//! Affine coupling layers and the invertible mapping stack.
//!
//! Each layer transforms exactly one coordinate of a 3D point; a conditioner
//! MLP sees the positionally encoded untouched coordinates plus the frame
//! latent code and emits (scale, translation). The scale acts through
//! exponentiation, so every layer is invertible for any parameter values, and
//! a zero-initialized final conditioner layer makes the whole stack start as
//! the identity map.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::encoding::{encoded_dim, positional_encode, positional_encode_backward};
use super::linear::{Mlp, MlpTrace};
use super::params::{ParamGroup, ParamVisitor, Parameterized, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CouplingLayer<R> {
    /// Index of the transformed coordinate (0 = x, 1 = y, 2 = z).
    pub transformed: usize,
    pub n_freq: usize,
    pub mlp: Mlp<R>,
}

/// Cache for one layer application (either direction).
#[derive(Debug)]
pub struct CouplingTrace<R> {
    others: Array2<R>,
    mlp: MlpTrace<R>,
    /// exp(s) for forward application, exp(-s) for inverse application.
    scale: Array1<R>,
    in_c: Array1<R>,
    out_c: Array1<R>,
}

impl<R: Real> CouplingLayer<R> {
    pub fn new(
        rng: &mut impl Rng,
        transformed: usize,
        latent_dim: usize,
        hidden: usize,
        mlp_layers: usize,
        n_freq: usize,
    ) -> Self {
        let in_dim = encoded_dim(2, n_freq) + latent_dim;
        CouplingLayer {
            transformed,
            n_freq,
            mlp: Mlp::new(rng, in_dim, hidden, 2, mlp_layers, true),
        }
    }

    fn others_of(&self, p: &Array2<R>) -> Array2<R> {
        let n = p.dim().0;
        let (a, b) = match self.transformed {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut out = Array2::zeros((n, 2));
        out.slice_mut(s![.., 0]).assign(&p.slice(s![.., a]));
        out.slice_mut(s![.., 1]).assign(&p.slice(s![.., b]));
        out
    }

    fn scatter_others(&self, g_others: &Array2<R>, into: &mut Array2<R>) {
        let (a, b) = match self.transformed {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut col_a = into.slice_mut(s![.., a]);
        col_a += &g_others.slice(s![.., 0]);
        let mut col_b = into.slice_mut(s![.., b]);
        col_b += &g_others.slice(s![.., 1]);
    }

    fn conditioner(
        &self,
        others: &Array2<R>,
        psi: &ArrayView2<R>,
        trace: Option<&mut MlpTrace<R>>,
    ) -> (Array1<R>, Array1<R>) {
        let pe = positional_encode(others, self.n_freq);
        let n = pe.dim().0;
        let mut cond = Array2::zeros((n, pe.dim().1 + psi.dim().1));
        cond.slice_mut(s![.., ..pe.dim().1]).assign(&pe);
        cond.slice_mut(s![.., pe.dim().1..]).assign(psi);
        let st = self.mlp.forward(&cond, trace);
        (st.column(0).to_owned(), st.column(1).to_owned())
    }

    /// y_c = x_c * exp(s) + t.
    pub fn forward(
        &self,
        x: &Array2<R>,
        psi: &ArrayView2<R>,
        want_trace: bool,
    ) -> (Array2<R>, Option<CouplingTrace<R>>) {
        let others = self.others_of(x);
        let mut mlp_trace = MlpTrace::default();
        let (sv, tv) = self.conditioner(&others, psi, want_trace.then_some(&mut mlp_trace));
        let scale = sv.mapv(|v| v.exp());
        let c = self.transformed;
        let mut y = x.clone();
        let in_c = x.column(c).to_owned();
        for (r, yv) in y.column_mut(c).iter_mut().enumerate() {
            *yv = in_c[r] * scale[r] + tv[r];
        }
        let trace = want_trace.then(|| CouplingTrace {
            others,
            mlp: mlp_trace,
            out_c: y.column(c).to_owned(),
            scale,
            in_c,
        });
        (y, trace)
    }

    /// x_c = (y_c - t) * exp(-s): exact analytic inverse of `forward`.
    pub fn inverse(
        &self,
        y: &Array2<R>,
        psi: &ArrayView2<R>,
        want_trace: bool,
    ) -> (Array2<R>, Option<CouplingTrace<R>>) {
        let others = self.others_of(y);
        let mut mlp_trace = MlpTrace::default();
        let (sv, tv) = self.conditioner(&others, psi, want_trace.then_some(&mut mlp_trace));
        let scale = sv.mapv(|v| (-v).exp());
        let c = self.transformed;
        let mut x = y.clone();
        let in_c = y.column(c).to_owned();
        for (r, xv) in x.column_mut(c).iter_mut().enumerate() {
            *xv = (in_c[r] - tv[r]) * scale[r];
        }
        let trace = want_trace.then(|| CouplingTrace {
            others,
            mlp: mlp_trace,
            out_c: x.column(c).to_owned(),
            scale,
            in_c,
        });
        (x, trace)
    }

    /// Backward through a forward application. Adds the latent gradient into
    /// `g_psi` and returns the gradient w.r.t. the layer input.
    pub fn backward_forward(
        &mut self,
        tr: &CouplingTrace<R>,
        gy: &Array2<R>,
        g_psi: &mut Array2<R>,
    ) -> Array2<R> {
        let c = self.transformed;
        let n = gy.dim().0;
        let gy_c = gy.column(c).to_owned();
        // d s = gy_c * x_c * exp(s), d t = gy_c, d x_c = gy_c * exp(s)
        let mut g_st = Array2::zeros((n, 2));
        for r in 0..n {
            g_st[(r, 0)] = gy_c[r] * tr.in_c[r] * tr.scale[r];
            g_st[(r, 1)] = gy_c[r];
        }
        let mut gx = gy.clone();
        for (r, gv) in gx.column_mut(c).iter_mut().enumerate() {
            *gv = gy_c[r] * tr.scale[r];
        }
        self.cond_backward(tr, &g_st, &mut gx, g_psi);
        gx
    }

    /// Backward through an inverse application (gradient w.r.t. y given
    /// gradient w.r.t. x).
    pub fn backward_inverse(
        &mut self,
        tr: &CouplingTrace<R>,
        gx: &Array2<R>,
        g_psi: &mut Array2<R>,
    ) -> Array2<R> {
        let c = self.transformed;
        let n = gx.dim().0;
        let gx_c = gx.column(c).to_owned();
        // x_c = (y_c - t) e^{-s}: d y_c = gx_c e^{-s}, d t = -gx_c e^{-s},
        // d s = -gx_c * x_c
        let mut g_st = Array2::zeros((n, 2));
        for r in 0..n {
            g_st[(r, 0)] = -gx_c[r] * tr.out_c[r];
            g_st[(r, 1)] = -gx_c[r] * tr.scale[r];
        }
        let mut gy = gx.clone();
        for (r, gv) in gy.column_mut(c).iter_mut().enumerate() {
            *gv = gx_c[r] * tr.scale[r];
        }
        self.cond_backward(tr, &g_st, &mut gy, g_psi);
        gy
    }

    fn cond_backward(
        &mut self,
        tr: &CouplingTrace<R>,
        g_st: &Array2<R>,
        g_point: &mut Array2<R>,
        g_psi: &mut Array2<R>,
    ) {
        let g_cond = self.mlp.backward(&tr.mlp, g_st);
        let pe_dim = encoded_dim(2, self.n_freq);
        let g_pe = g_cond.slice(s![.., ..pe_dim]).to_owned();
        let g_others = positional_encode_backward(&tr.others, &g_pe, self.n_freq);
        self.scatter_others(&g_others, g_point);
        *g_psi += &g_cond.slice(s![.., pe_dim..]);
    }
}

/// The full invertible mapping: coupling layers cycling through the
/// (z, y, x) split pattern.
#[derive(Debug, Clone)]
pub struct CouplingStack<R> {
    pub layers: Vec<CouplingLayer<R>>,
}

/// Traces in application order, tagged with the layer index they belong to.
#[derive(Debug)]
pub struct StackTrace<R> {
    entries: Vec<(usize, CouplingTrace<R>)>,
}

impl<R> Default for StackTrace<R> {
    fn default() -> Self {
        StackTrace {
            entries: Vec::new(),
        }
    }
}

impl<R: Real> CouplingStack<R> {
    pub fn new(
        rng: &mut impl Rng,
        n_layers: usize,
        latent_dim: usize,
        hidden: usize,
        mlp_layers: usize,
        n_freq: usize,
    ) -> Self {
        let pattern = [2usize, 1, 0];
        let layers = (0..n_layers)
            .map(|l| CouplingLayer::new(rng, pattern[l % 3], latent_dim, hidden, mlp_layers, n_freq))
            .collect();
        CouplingStack { layers }
    }

    fn check_finite(p: &Array2<R>, layer: usize, context: &str) -> Result<()> {
        if p.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.into(),
                layer,
            })
        }
    }

    /// Local -> canonical.
    pub fn forward(
        &self,
        x: &Array2<R>,
        psi: &ArrayView2<R>,
        mut trace: Option<&mut StackTrace<R>>,
    ) -> Result<Array2<R>> {
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, tr) = layer.forward(&cur, psi, trace.is_some());
            Self::check_finite(&next, l, "map_to_canonical")?;
            if let Some(t) = trace.as_deref_mut() {
                t.entries.push((l, tr.unwrap()));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Canonical -> local: layers inverted in reverse order.
    pub fn inverse(
        &self,
        u: &Array2<R>,
        psi: &ArrayView2<R>,
        mut trace: Option<&mut StackTrace<R>>,
    ) -> Result<Array2<R>> {
        let mut cur = u.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (next, tr) = layer.inverse(&cur, psi, trace.is_some());
            Self::check_finite(&next, l, "map_from_canonical")?;
            if let Some(t) = trace.as_deref_mut() {
                t.entries.push((l, tr.unwrap()));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Backward through a `forward` trace; returns gradient w.r.t. the input
    /// points and accumulates the latent gradient.
    pub fn backward_forward(
        &mut self,
        trace: &StackTrace<R>,
        g_out: &Array2<R>,
        g_psi: &mut Array2<R>,
    ) -> Array2<R> {
        let mut g = g_out.clone();
        for (l, tr) in trace.entries.iter().rev() {
            g = self.layers[*l].backward_forward(tr, &g, g_psi);
        }
        g
    }

    /// Backward through an `inverse` trace.
    pub fn backward_inverse(
        &mut self,
        trace: &StackTrace<R>,
        g_out: &Array2<R>,
        g_psi: &mut Array2<R>,
    ) -> Array2<R> {
        let mut g = g_out.clone();
        for (l, tr) in trace.entries.iter().rev() {
            g = self.layers[*l].backward_inverse(tr, &g, g_psi);
        }
        g
    }
}

impl<R: Real> Parameterized<R> for CouplingStack<R> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer
                .mlp
                .visit_params(&format!("{prefix}.coupling{l}"), group, v);
        }
    }
}

/// Broadcast a single latent row to a batch view.
pub fn broadcast_psi<R: Real>(psi: &Array1<R>, n: usize) -> Array2<R> {
    let mut out = Array2::zeros((n, psi.len()));
    for mut row in out.axis_iter_mut(Axis(0)) {
        row.assign(psi);
    }
    out
}
