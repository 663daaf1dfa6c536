//! Multiplicative filter network with Gabor filters.
//!
//! Layer structure: z1 = g1(x); z_{l+1} = (W_l z_l + b_l) * g_{l+1}(x);
//! output = W_out z_L + b_out, where each filter unit is
//! g_u(x) = sin(omega_u . x + phi_u) * exp(-gamma_u/2 * |x - mu_u|^2).
//! A plain positionally encoded ReLU MLP is available as a fallback backbone.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::encoding::{encoded_dim, positional_encode, positional_encode_backward};
use super::linear::{Linear, Mlp, MlpTrace};
use super::params::{normal, ParamGroup, ParamVisitor, Parameterized, Real};

#[derive(Debug, Clone)]
pub struct GaborFilter<R> {
    pub omega: Array2<R>, // in x units
    pub phi: Array1<R>,   // units
    pub mu: Array2<R>,    // units x in
    pub gamma: Array1<R>, // units
    pub g_omega: Array2<R>,
    pub g_phi: Array1<R>,
    pub g_mu: Array2<R>,
    pub g_gamma: Array1<R>,
}

#[derive(Debug, Clone)]
pub struct FilterTrace<R> {
    s: Array2<R>,   // N x U phase
    env: Array2<R>, // N x U envelope
    d2: Array2<R>,  // N x U squared distance
    pub g: Array2<R>, // N x U filter output
}

impl<R: Real> GaborFilter<R> {
    pub fn new(
        rng: &mut impl Rng,
        in_dim: usize,
        units: usize,
        freq_scale: f64,
        mu_range: f64,
    ) -> Self {
        let omega = Array2::from_shape_fn((in_dim, units), |_| normal::<R>(rng, freq_scale));
        let phi = Array1::from_shape_fn(units, |_| {
            R::c(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        });
        let mu = Array2::from_shape_fn((units, in_dim), |_| R::c(rng.gen_range(-mu_range..mu_range)));
        let gamma_scale = 1.0 / (mu_range * mu_range).max(1e-6);
        let gamma =
            Array1::from_shape_fn(units, |_| R::c(rng.gen_range(0.5..2.0) * gamma_scale));
        GaborFilter {
            g_omega: Array2::zeros(omega.dim()),
            g_phi: Array1::zeros(phi.dim()),
            g_mu: Array2::zeros(mu.dim()),
            g_gamma: Array1::zeros(gamma.dim()),
            omega,
            phi,
            mu,
            gamma,
        }
    }

    pub fn forward(&self, x: &Array2<R>) -> FilterTrace<R> {
        let mut s = x.dot(&self.omega);
        s += &self.phi;
        // |x - mu|^2 = |x|^2 - 2 x.mu + |mu|^2
        let x2 = x.mapv(|v| v * v).sum_axis(Axis(1));
        let m2 = self.mu.mapv(|v| v * v).sum_axis(Axis(1));
        let cross = x.dot(&self.mu.t());
        let (n, u) = cross.dim();
        let mut d2 = Array2::zeros((n, u));
        let half = R::c(0.5);
        for r in 0..n {
            for c in 0..u {
                let v = x2[r] - R::c(2.0) * cross[(r, c)] + m2[c];
                d2[(r, c)] = if v > R::zero() { v } else { R::zero() };
            }
        }
        let mut env = Array2::zeros((n, u));
        for r in 0..n {
            for c in 0..u {
                env[(r, c)] = (-half * self.gamma[c] * d2[(r, c)]).exp();
            }
        }
        let mut g = Array2::zeros((n, u));
        for r in 0..n {
            for c in 0..u {
                g[(r, c)] = s[(r, c)].sin() * env[(r, c)];
            }
        }
        FilterTrace { s, env, d2, g }
    }

    /// Accumulates parameter grads; adds the input gradient into `gx`.
    pub fn backward(&mut self, x: &Array2<R>, tr: &FilterTrace<R>, gg: &Array2<R>, gx: &mut Array2<R>) {
        let (n, u) = gg.dim();
        let half = R::c(0.5);
        let two = R::c(2.0);
        // phase branch
        let mut ds = Array2::zeros((n, u));
        for r in 0..n {
            for c in 0..u {
                ds[(r, c)] = gg[(r, c)] * tr.s[(r, c)].cos() * tr.env[(r, c)];
            }
        }
        self.g_omega += &x.t().dot(&ds);
        self.g_phi += &ds.sum_axis(Axis(0));
        *gx += &ds.dot(&self.omega.t());
        // envelope branch: a = -gamma/2 * d2, env = exp(a)
        let mut da = Array2::zeros((n, u));
        for r in 0..n {
            for c in 0..u {
                da[(r, c)] = gg[(r, c)] * tr.s[(r, c)].sin() * tr.env[(r, c)];
            }
        }
        for c in 0..u {
            let mut acc = R::zero();
            for r in 0..n {
                acc = acc - half * tr.d2[(r, c)] * da[(r, c)];
            }
            self.g_gamma[c] = self.g_gamma[c] + acc;
        }
        // d(d2): D = da * (-gamma/2)
        let mut d_d2 = Array2::zeros((n, u));
        for r in 0..n {
            for c in 0..u {
                d_d2[(r, c)] = -half * self.gamma[c] * da[(r, c)];
            }
        }
        // dx += 2 (x * rowsum(D) - D.mu); dmu += 2 (mu * colsum(D) - D^T.x)
        let row_sum = d_d2.sum_axis(Axis(1));
        let col_sum = d_d2.sum_axis(Axis(0));
        let d_mu_cross = d_d2.dot(&self.mu); // N x in
        let d_x_cross = d_d2.t().dot(x); // U x in
        let in_dim = x.dim().1;
        for r in 0..n {
            for c in 0..in_dim {
                gx[(r, c)] = gx[(r, c)] + two * (x[(r, c)] * row_sum[r] - d_mu_cross[(r, c)]);
            }
        }
        for uu in 0..u {
            for c in 0..in_dim {
                self.g_mu[(uu, c)] =
                    self.g_mu[(uu, c)] + two * (self.mu[(uu, c)] * col_sum[uu] - d_x_cross[(uu, c)]);
            }
        }
    }

    fn visit(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        v.visit(
            &format!("{prefix}.omega"),
            group,
            self.omega.as_slice_mut().unwrap(),
            self.g_omega.as_slice_mut().unwrap(),
        );
        v.visit(
            &format!("{prefix}.phi"),
            group,
            self.phi.as_slice_mut().unwrap(),
            self.g_phi.as_slice_mut().unwrap(),
        );
        v.visit(
            &format!("{prefix}.mu"),
            group,
            self.mu.as_slice_mut().unwrap(),
            self.g_mu.as_slice_mut().unwrap(),
        );
        v.visit(
            &format!("{prefix}.gamma"),
            group,
            self.gamma.as_slice_mut().unwrap(),
            self.g_gamma.as_slice_mut().unwrap(),
        );
    }
}

/// Coordinate network backbone: Gabor MFN or plain PE + ReLU MLP fallback.
#[derive(Debug, Clone)]
pub enum CoordNet<R> {
    Gabor {
        filters: Vec<GaborFilter<R>>,
        hidden: Vec<Linear<R>>,
        out: Linear<R>,
    },
    PeMlp {
        n_freq: usize,
        mlp: Mlp<R>,
    },
}

#[derive(Debug, Clone)]
pub enum CoordNetTrace<R> {
    Gabor {
        x: Array2<R>,
        filters: Vec<FilterTrace<R>>,
        /// Input to each hidden linear (= z_l).
        zs: Vec<Array2<R>>,
        /// Pre-product outputs of each hidden linear (= h_l).
        hs: Vec<Array2<R>>,
        /// Input to the output layer (= z_L).
        z_last: Array2<R>,
    },
    PeMlp {
        x: Array2<R>,
        pe: Array2<R>,
        mlp: MlpTrace<R>,
    },
}

impl<R: Real> CoordNet<R> {
    pub fn gabor(
        rng: &mut impl Rng,
        in_dim: usize,
        units: usize,
        n_layers: usize,
        out_dim: usize,
        freq_scale: f64,
        mu_range: f64,
    ) -> Self {
        assert!(n_layers >= 1);
        let filters = (0..n_layers)
            .map(|_| GaborFilter::new(rng, in_dim, units, freq_scale, mu_range))
            .collect();
        let hidden = (0..n_layers - 1)
            .map(|_| Linear::new(rng, units, units))
            .collect();
        let out = Linear::new(rng, units, out_dim);
        CoordNet::Gabor {
            filters,
            hidden,
            out,
        }
    }

    pub fn pe_mlp(
        rng: &mut impl Rng,
        in_dim: usize,
        units: usize,
        n_layers: usize,
        out_dim: usize,
        n_freq: usize,
    ) -> Self {
        let mlp = Mlp::new(
            rng,
            encoded_dim(in_dim, n_freq),
            units,
            out_dim,
            n_layers + 1,
            false,
        );
        CoordNet::PeMlp { n_freq, mlp }
    }

    pub fn forward(&self, x: &Array2<R>, trace: Option<&mut Option<CoordNetTrace<R>>>) -> Array2<R> {
        match self {
            CoordNet::Gabor {
                filters,
                hidden,
                out,
            } => {
                let mut f_traces = Vec::with_capacity(filters.len());
                let t0 = filters[0].forward(x);
                let mut z = t0.g.clone();
                f_traces.push(t0);
                let mut zs = Vec::new();
                let mut hs = Vec::new();
                for (l, lin) in hidden.iter().enumerate() {
                    let h = lin.forward(&z);
                    let ft = filters[l + 1].forward(x);
                    let z_next = &h * &ft.g;
                    if trace.is_some() {
                        zs.push(z);
                        hs.push(h);
                    }
                    f_traces.push(ft);
                    z = z_next;
                }
                let y = out.forward(&z);
                if let Some(t) = trace {
                    *t = Some(CoordNetTrace::Gabor {
                        x: x.clone(),
                        filters: f_traces,
                        zs,
                        hs,
                        z_last: z,
                    });
                }
                y
            }
            CoordNet::PeMlp { n_freq, mlp } => {
                let pe = positional_encode(x, *n_freq);
                let mut mlp_trace = MlpTrace::default();
                let want = trace.is_some();
                let y = mlp.forward(&pe, want.then_some(&mut mlp_trace));
                if let Some(t) = trace {
                    *t = Some(CoordNetTrace::PeMlp {
                        x: x.clone(),
                        pe,
                        mlp: mlp_trace,
                    });
                }
                y
            }
        }
    }

    /// Returns the gradient w.r.t. the input batch.
    pub fn backward(&mut self, trace: &CoordNetTrace<R>, gy: &Array2<R>) -> Array2<R> {
        match (self, trace) {
            (
                CoordNet::Gabor {
                    filters,
                    hidden,
                    out,
                },
                CoordNetTrace::Gabor {
                    x,
                    filters: f_traces,
                    zs,
                    hs,
                    z_last,
                },
            ) => {
                let mut gx = Array2::zeros(x.dim());
                let mut gz = out.backward(z_last, gy);
                for l in (0..hidden.len()).rev() {
                    // z_{l+1} = h_l * g_{l+1}
                    let ft = &f_traces[l + 1];
                    let gh = &gz * &ft.g;
                    let gg = &gz * &hs[l];
                    filters[l + 1].backward(x, ft, &gg, &mut gx);
                    gz = hidden[l].backward(&zs[l], &gh);
                }
                filters[0].backward(x, &f_traces[0], &gz, &mut gx);
                gx
            }
            (CoordNet::PeMlp { n_freq, mlp }, CoordNetTrace::PeMlp { x, pe: _, mlp: mt }) => {
                let g_pe = mlp.backward(mt, gy);
                positional_encode_backward(x, &g_pe, *n_freq)
            }
            _ => unreachable!("trace kind mismatch"),
        }
    }
}

impl<R: Real> Parameterized<R> for CoordNet<R> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>) {
        match self {
            CoordNet::Gabor {
                filters,
                hidden,
                out,
            } => {
                for (i, f) in filters.iter_mut().enumerate() {
                    f.visit(&format!("{prefix}.filter{i}"), group, v);
                }
                for (i, h) in hidden.iter_mut().enumerate() {
                    h.visit_params(&format!("{prefix}.hidden{i}"), group, v);
                }
                out.visit_params(&format!("{prefix}.out"), group, v);
            }
            CoordNet::PeMlp { mlp, .. } => {
                mlp.visit_params(&format!("{prefix}.mlp"), group, v);
            }
        }
    }
}
