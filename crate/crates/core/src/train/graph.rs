//! The differentiable training step: batched rendering of supervised
//! correspondences through the model and hand-derived backward passes for
//! every loss component.
//!
//! One step renders `pairs_per_step` image pairs. For each pair, all K
//! samples of all its query rays go through the mapping and field as one
//! matrix batch; Eq.-style compositing, the losses, and their gradients are
//! then evaluated per ray.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use super::config::TrainConfig;
use super::loss::{lambda_pho, LossBreakdown};
use crate::error::Result;
use crate::model::coupling::broadcast_psi;
use crate::model::gabor::CoordNetTrace;
use crate::model::{OmniMotionModel, Real, StackTrace};

/// Per-frame photometric pixels when decoupled from the flow queries.
#[derive(Debug, Clone)]
pub struct PhoBatch<R> {
    pub queries: Array2<R>, // B x 2 normalized
    pub colors: Array2<R>,  // B x 3 observed
    pub depths: Array2<R>,  // B x K
}

/// Supervision slice for one image pair.
#[derive(Debug, Clone)]
pub struct PairBatch<R> {
    pub i: usize,
    pub j: usize,
    /// i - 1 and i + 1 when both exist (acceleration regularizer skips
    /// boundary frames).
    pub prev_next: Option<(usize, usize)>,
    /// Interval weight w(delta, window).
    pub weight: f64,
    pub queries: Array2<R>, // B x 2 normalized pixels in frame i
    pub targets: Array2<R>, // B x 2 normalized supervised positions in frame j
    pub colors: Array2<R>,  // B x 3 frame-i colors at the queries
    pub depths: Array2<R>,  // B x K stratified sample depths
    /// Rays whose samples enter the acceleration regularizer.
    pub reg_rows: Vec<usize>,
    /// Index pairs for the gradient losses.
    pub pgrad_pairs: Vec<(usize, usize)>,
    /// Photometric rays decoupled from the queries (None = reuse queries).
    pub pho: Option<PhoBatch<R>>,
}

/// A full step's supervision.
#[derive(Debug, Clone)]
pub struct StepBatch<R> {
    pub pairs: Vec<PairBatch<R>>,
    /// Distinct frames referenced by the pairs (sorted).
    pub frames: Vec<usize>,
    pub n_frames: usize,
}

impl<R: Real> StepBatch<R> {
    pub fn frame_row(&self, frame: usize) -> usize {
        self.frames.binary_search(&frame).expect("frame in batch")
    }

    pub fn times(&self) -> Array2<R> {
        let n = self.n_frames;
        Array2::from_shape_fn((self.frames.len(), 1), |(r, _)| {
            R::c(if n <= 1 {
                0.0
            } else {
                self.frames[r] as f64 / (n - 1) as f64
            })
        })
    }
}

/// Loss weights at a given step.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub pho: f64,
    pub reg: f64,
    pub pgrad: f64,
    pub zrange: f64,
}

impl LossWeights {
    pub fn at_step(cfg: &TrainConfig, step: usize) -> Self {
        LossWeights {
            pho: if cfg.photometric {
                lambda_pho(step, cfg.lambda_pho_max, cfg.lambda_pho_ramp_steps)
            } else {
                0.0
            },
            reg: cfg.lambda_reg,
            pgrad: cfg.lambda_pgrad,
            zrange: cfg.lambda_zrange,
        }
    }
}

/// Global normalizers so every loss is a mean over the whole step.
struct Normalizers {
    flow: f64,
    pho: f64,
    reg: f64,
    pgrad: f64,
    zrange: f64,
}

impl Normalizers {
    fn of<R: Real>(batch: &StepBatch<R>) -> Self {
        let mut n = Normalizers {
            flow: 0.0,
            pho: 0.0,
            reg: 0.0,
            pgrad: 0.0,
            zrange: 0.0,
        };
        for p in &batch.pairs {
            let b = p.queries.dim().0 as f64;
            let k = p.depths.dim().1 as f64;
            n.flow += p.weight * b;
            n.pho += p.pho.as_ref().map(|x| x.queries.dim().0 as f64).unwrap_or(b);
            n.pgrad += p.pgrad_pairs.len() as f64;
            n.zrange += b * k;
            if p.prev_next.is_some() {
                let r = p.reg_rows.len() as f64 * k;
                n.reg += r;
                n.zrange += 2.0 * r;
            }
        }
        n.flow = n.flow.max(1e-12);
        n.pho = n.pho.max(1e-12);
        n.reg = n.reg.max(1e-12);
        n.pgrad = n.pgrad.max(1e-12);
        n.zrange = n.zrange.max(1e-12);
        n
    }
}

fn ray_matrix<R: Real>(queries: &Array2<R>, depths: &Array2<R>) -> Array2<R> {
    let (b, k) = depths.dim();
    let mut x = Array2::zeros((b * k, 3));
    for r in 0..b {
        for s in 0..k {
            x[(r * k + s, 0)] = queries[(r, 0)];
            x[(r * k + s, 1)] = queries[(r, 1)];
            x[(r * k + s, 2)] = depths[(r, s)];
        }
    }
    x
}

/// alpha and transmittance per (ray, sample).
fn alpha_trans<R: Real>(sigma: &Array1<R>, b: usize, k: usize) -> (Array2<R>, Array2<R>) {
    let mut alpha = Array2::zeros((b, k));
    let mut trans = Array2::zeros((b, k));
    for r in 0..b {
        let mut t = R::one();
        for s in 0..k {
            let a = R::one() - (-sigma[r * k + s]).exp();
            alpha[(r, s)] = a;
            trans[(r, s)] = t;
            t = t * (R::one() - a);
        }
    }
    (alpha, trans)
}

/// Composite per-ray values: out[b] = sum_k T a v[b*k + s].
fn composite<R: Real>(
    values: &Array2<R>,
    alpha: &Array2<R>,
    trans: &Array2<R>,
) -> Array2<R> {
    let (b, k) = alpha.dim();
    let d = values.dim().1;
    let mut out = Array2::zeros((b, d));
    for r in 0..b {
        for s in 0..k {
            let w = trans[(r, s)] * alpha[(r, s)];
            for c in 0..d {
                out[(r, c)] = out[(r, c)] + w * values[(r * k + s, c)];
            }
        }
    }
    out
}

/// Backward through alpha compositing for (possibly) two composited heads
/// sharing the same weights. Accumulates into g_values / g_sigma.
#[allow(clippy::too_many_arguments)]
fn composite_backward<R: Real>(
    values: &Array2<R>,
    g_out: &Array2<R>,
    alpha: &Array2<R>,
    trans: &Array2<R>,
    g_values: &mut Array2<R>,
    g_weight_scalar: &mut Array2<R>,
) {
    let (b, k) = alpha.dim();
    let d = values.dim().1;
    for r in 0..b {
        for s in 0..k {
            let w = trans[(r, s)] * alpha[(r, s)];
            let mut dot = R::zero();
            for c in 0..d {
                g_values[(r * k + s, c)] = g_values[(r * k + s, c)] + w * g_out[(r, c)];
                dot = dot + values[(r * k + s, c)] * g_out[(r, c)];
            }
            g_weight_scalar[(r, s)] = g_weight_scalar[(r, s)] + dot;
        }
    }
}

/// From dL/dw (per sample weight) to dL/dsigma, via
/// dL/da_s = T_s (g_s - B_s), B_s = a_{s+1} g_{s+1} + (1 - a_{s+1}) B_{s+1}.
fn weights_to_sigma_grad<R: Real>(
    g_w: &Array2<R>,
    alpha: &Array2<R>,
    trans: &Array2<R>,
    g_sigma: &mut Array1<R>,
) {
    let (b, k) = alpha.dim();
    for r in 0..b {
        let mut acc = R::zero();
        for s in (0..k).rev() {
            let da = trans[(r, s)] * (g_w[(r, s)] - acc);
            acc = alpha[(r, s)] * g_w[(r, s)] + (R::one() - alpha[(r, s)]) * acc;
            // d alpha / d sigma = exp(-sigma) = 1 - alpha
            g_sigma[r * k + s] = g_sigma[r * k + s] + da * (R::one() - alpha[(r, s)]);
        }
    }
}

/// L1 subgradient with a deadband at the kink: residuals this close to zero
/// are treated as exactly zero, so float noise around a perfect fit does not
/// emit full-magnitude, random-sign gradients.
const KINK_DEADBAND: f64 = 1e-7;

fn sign<R: Real>(v: R) -> R {
    if v > R::c(KINK_DEADBAND) {
        R::one()
    } else if v < R::c(-KINK_DEADBAND) {
        -R::one()
    } else {
        R::zero()
    }
}

/// Forward-only evaluation of the step losses (used by training logs and the
/// finite-difference harness).
pub fn step_forward<R: Real>(
    model: &OmniMotionModel<R>,
    batch: &StepBatch<R>,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    run_step(&mut model.clone(), batch, w, false)
}

/// Forward + backward: accumulates parameter gradients for the whole step.
pub fn step_backward<R: Real>(
    model: &mut OmniMotionModel<R>,
    batch: &StepBatch<R>,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    run_step(model, batch, w, true)
}

fn run_step<R: Real>(
    model: &mut OmniMotionModel<R>,
    batch: &StepBatch<R>,
    w: &LossWeights,
    backward: bool,
) -> Result<LossBreakdown> {
    let norms = Normalizers::of(batch);
    let near = model.cfg.near;
    let far = model.cfg.far;
    let latent_dim = model.cfg.latent_dim;

    // latent codes for every frame this step touches
    let times = batch.times();
    let mut latent_trace: Option<CoordNetTrace<R>> = None;
    let psi_all = model
        .latent
        .forward(&times, backward.then_some(&mut latent_trace));
    let mut g_psi_all = Array2::<R>::zeros(psi_all.dim());

    let mut sums = LossBreakdown::default();

    for pair in &batch.pairs {
        let (b, k) = pair.depths.dim();
        let psi_i = psi_all.row(batch.frame_row(pair.i)).to_owned();
        let psi_j = psi_all.row(batch.frame_row(pair.j)).to_owned();

        let x = ray_matrix(&pair.queries, &pair.depths);
        let big_i = broadcast_psi(&psi_i, b * k);
        let big_j = broadcast_psi(&psi_j, b * k);

        let mut tr_i = StackTrace::default();
        let u = model
            .mapping
            .forward(&x, &big_i.view(), backward.then_some(&mut tr_i))?;
        let (sigma, color, field_trace) = model.field.forward(&u, backward);
        let mut tr_j = StackTrace::default();
        let y = model
            .mapping
            .inverse(&u, &big_j.view(), backward.then_some(&mut tr_j))?;

        let (alpha, trans) = alpha_trans(&sigma, b, k);
        let xhat = composite(&y, &alpha, &trans);
        let chat = composite(&color, &alpha, &trans);

        // regularizer branch
        let reg_active = pair.prev_next.is_some() && !pair.reg_rows.is_empty();
        let mut x_sub = Array2::<R>::zeros((0, 3));
        let (mut y_prev, mut y_next) = (Array2::<R>::zeros((0, 3)), Array2::<R>::zeros((0, 3)));
        let mut tr_prev = StackTrace::default();
        let mut tr_next = StackTrace::default();
        if reg_active {
            let (pf, nf) = pair.prev_next.unwrap();
            let n_sub = pair.reg_rows.len() * k;
            let mut u_sub = Array2::<R>::zeros((n_sub, 3));
            x_sub = Array2::zeros((n_sub, 3));
            for (ri, &row) in pair.reg_rows.iter().enumerate() {
                for s in 0..k {
                    for c in 0..3 {
                        u_sub[(ri * k + s, c)] = u[(row * k + s, c)];
                        x_sub[(ri * k + s, c)] = x[(row * k + s, c)];
                    }
                }
            }
            let psi_prev = psi_all.row(batch.frame_row(pf)).to_owned();
            let psi_next = psi_all.row(batch.frame_row(nf)).to_owned();
            let big_prev = broadcast_psi(&psi_prev, n_sub);
            let big_next = broadcast_psi(&psi_next, n_sub);
            y_prev = model.mapping.inverse(
                &u_sub,
                &big_prev.view(),
                backward.then_some(&mut tr_prev),
            )?;
            y_next = model.mapping.inverse(
                &u_sub,
                &big_next.view(),
                backward.then_some(&mut tr_next),
            )?;
        }

        // photometric rays decoupled from the queries, when configured
        let mut pho_parts = None;
        if let Some(pho) = &pair.pho {
            let (pb, pk) = pho.depths.dim();
            let xp = ray_matrix(&pho.queries, &pho.depths);
            let big_p = broadcast_psi(&psi_i, pb * pk);
            let mut tr_p = StackTrace::default();
            let up = model
                .mapping
                .forward(&xp, &big_p.view(), backward.then_some(&mut tr_p))?;
            let (sig_p, col_p, ftr_p) = model.field.forward(&up, backward);
            let (al_p, trn_p) = alpha_trans(&sig_p, pb, pk);
            let chat_p = composite(&col_p, &al_p, &trn_p);
            pho_parts = Some((xp, big_p, tr_p, up, sig_p, col_p, ftr_p, al_p, trn_p, chat_p));
        }

        // ------------------------------------------------------------ losses
        let wp = R::c(pair.weight);
        let mut flow_sum = R::zero();
        for r in 0..b {
            let ex = xhat[(r, 0)] - pair.targets[(r, 0)];
            let ey = xhat[(r, 1)] - pair.targets[(r, 1)];
            flow_sum = flow_sum + ex.abs() + ey.abs();
        }
        sums.flow += (wp * flow_sum).to_f64_() / norms.flow;

        let (pho_pred, pho_obs): (&Array2<R>, &Array2<R>) = match &pho_parts {
            Some(parts) => (&parts.9, &pair.pho.as_ref().unwrap().colors),
            None => (&chat, &pair.colors),
        };
        let mut pho_sum = R::zero();
        for r in 0..pho_pred.dim().0 {
            for c in 0..3 {
                let d = pho_pred[(r, c)] - pho_obs[(r, c)];
                pho_sum = pho_sum + d * d;
            }
        }
        sums.pho += pho_sum.to_f64_() / norms.pho;

        if reg_active {
            let mut reg_sum = R::zero();
            for r in 0..y_prev.dim().0 {
                for c in 0..3 {
                    reg_sum = reg_sum
                        + (y_next[(r, c)] + y_prev[(r, c)] - R::c(2.0) * x_sub[(r, c)]).abs();
                }
            }
            sums.reg += reg_sum.to_f64_() / norms.reg;
        }

        let mut pg_sum = R::zero();
        for &(a, bb) in &pair.pgrad_pairs {
            for c in 0..3 {
                let pd = chat[(a, c)] - chat[(bb, c)];
                let od = pair.colors[(a, c)] - pair.colors[(bb, c)];
                pg_sum = pg_sum + (pd - od).abs();
            }
            for c in 0..2 {
                // predicted and supervised flows share the -query term, so
                // the difference of differences reduces to positions
                let pd = xhat[(a, c)] - xhat[(bb, c)];
                let od = pair.targets[(a, c)] - pair.targets[(bb, c)];
                pg_sum = pg_sum + (pd - od).abs();
            }
        }
        sums.pgrad += pg_sum.to_f64_() / norms.pgrad;

        let hinge = |z: R| -> R {
            let zf = z.to_f64_();
            R::c((zf - far).max(0.0) + (near - zf).max(0.0))
        };
        let mut zr_sum = R::zero();
        for r in 0..y.dim().0 {
            zr_sum = zr_sum + hinge(y[(r, 2)]);
        }
        for r in 0..y_prev.dim().0 {
            zr_sum = zr_sum + hinge(y_prev[(r, 2)]) + hinge(y_next[(r, 2)]);
        }
        sums.zrange += zr_sum.to_f64_() / norms.zrange;

        if !backward {
            continue;
        }

        // ---------------------------------------------------------- backward
        let mut g_xhat = Array2::<R>::zeros((b, 3));
        let mut g_chat = Array2::<R>::zeros((b, 3));

        let flow_scale = R::c(pair.weight / norms.flow);
        for r in 0..b {
            for c in 0..2 {
                let e = xhat[(r, c)] - pair.targets[(r, c)];
                g_xhat[(r, c)] = g_xhat[(r, c)] + flow_scale * sign(e);
            }
        }
        let pg_scale = R::c(w.pgrad / norms.pgrad);
        for &(a, bb) in &pair.pgrad_pairs {
            for c in 0..3 {
                let pd = chat[(a, c)] - chat[(bb, c)];
                let od = pair.colors[(a, c)] - pair.colors[(bb, c)];
                let s = pg_scale * sign(pd - od);
                g_chat[(a, c)] = g_chat[(a, c)] + s;
                g_chat[(bb, c)] = g_chat[(bb, c)] - s;
            }
            for c in 0..2 {
                let pd = xhat[(a, c)] - xhat[(bb, c)];
                let od = pair.targets[(a, c)] - pair.targets[(bb, c)];
                let s = pg_scale * sign(pd - od);
                g_xhat[(a, c)] = g_xhat[(a, c)] + s;
                g_xhat[(bb, c)] = g_xhat[(bb, c)] - s;
            }
        }
        if pho_parts.is_none() {
            let pho_scale = R::c(2.0 * w.pho / norms.pho);
            for r in 0..b {
                for c in 0..3 {
                    g_chat[(r, c)] =
                        g_chat[(r, c)] + pho_scale * (chat[(r, c)] - pair.colors[(r, c)]);
                }
            }
        }

        // composite backward (correspondence + color heads share weights)
        let mut g_y = Array2::<R>::zeros(y.dim());
        let mut g_color = Array2::<R>::zeros(color.dim());
        let mut g_sigma = Array1::<R>::zeros(sigma.dim());
        let mut g_w = Array2::<R>::zeros((b, k));
        composite_backward(&y, &g_xhat, &alpha, &trans, &mut g_y, &mut g_w);
        composite_backward(&color, &g_chat, &alpha, &trans, &mut g_color, &mut g_w);
        weights_to_sigma_grad(&g_w, &alpha, &trans, &mut g_sigma);

        // depth-range hinge on mapped points
        let zr_scale = R::c(w.zrange / norms.zrange);
        let dhinge = |z: R| -> R {
            let zf = z.to_f64_();
            if zf > far {
                R::one()
            } else if zf < near {
                -R::one()
            } else {
                R::zero()
            }
        };
        for r in 0..y.dim().0 {
            g_y[(r, 2)] = g_y[(r, 2)] + zr_scale * dhinge(y[(r, 2)]);
        }

        // backward through the mappings
        let mut g_big_i = Array2::<R>::zeros((b * k, latent_dim));
        let mut g_big_j = Array2::<R>::zeros((b * k, latent_dim));
        let mut g_u = model.mapping.backward_inverse(&tr_j, &g_y, &mut g_big_j);
        let g_u_field = model.field.backward(
            field_trace.as_ref().expect("field trace"),
            &g_sigma,
            &g_color,
        );
        g_u += &g_u_field;

        if reg_active {
            let n_sub = y_prev.dim().0;
            let reg_scale = R::c(w.reg / norms.reg);
            let mut g_yp = Array2::<R>::zeros((n_sub, 3));
            let mut g_yn = Array2::<R>::zeros((n_sub, 3));
            for r in 0..n_sub {
                for c in 0..3 {
                    let s = reg_scale
                        * sign(y_next[(r, c)] + y_prev[(r, c)] - R::c(2.0) * x_sub[(r, c)]);
                    g_yp[(r, c)] = s;
                    g_yn[(r, c)] = s;
                }
                g_yp[(r, 2)] = g_yp[(r, 2)] + zr_scale * dhinge(y_prev[(r, 2)]);
                g_yn[(r, 2)] = g_yn[(r, 2)] + zr_scale * dhinge(y_next[(r, 2)]);
            }
            let mut g_big_prev = Array2::<R>::zeros((n_sub, latent_dim));
            let mut g_big_next = Array2::<R>::zeros((n_sub, latent_dim));
            let g_u_prev = model
                .mapping
                .backward_inverse(&tr_prev, &g_yp, &mut g_big_prev);
            let g_u_next = model
                .mapping
                .backward_inverse(&tr_next, &g_yn, &mut g_big_next);
            for (ri, &row) in pair.reg_rows.iter().enumerate() {
                for s in 0..k {
                    for c in 0..3 {
                        g_u[(row * k + s, c)] = g_u[(row * k + s, c)]
                            + g_u_prev[(ri * k + s, c)]
                            + g_u_next[(ri * k + s, c)];
                    }
                }
            }
            let (pf, nf) = pair.prev_next.unwrap();
            accumulate_psi_rows(&mut g_psi_all, batch.frame_row(pf), &g_big_prev);
            accumulate_psi_rows(&mut g_psi_all, batch.frame_row(nf), &g_big_next);
        }

        model.mapping.backward_forward(&tr_i, &g_u, &mut g_big_i);
        accumulate_psi_rows(&mut g_psi_all, batch.frame_row(pair.i), &g_big_i);
        accumulate_psi_rows(&mut g_psi_all, batch.frame_row(pair.j), &g_big_j);

        // photometric-only extra rays
        if let Some((_, _, tr_p, _up, sig_p, col_p, ftr_p, al_p, trn_p, chat_p)) = pho_parts {
            let pho = pair.pho.as_ref().unwrap();
            let (pb, pk) = pho.depths.dim();
            let mut g_chat_p = Array2::<R>::zeros((pb, 3));
            let pho_scale = R::c(2.0 * w.pho / norms.pho);
            for r in 0..pb {
                for c in 0..3 {
                    g_chat_p[(r, c)] = pho_scale * (chat_p[(r, c)] - pho.colors[(r, c)]);
                }
            }
            let mut g_col = Array2::<R>::zeros(col_p.dim());
            let mut g_sig = Array1::<R>::zeros(sig_p.dim());
            let mut g_wp = Array2::<R>::zeros((pb, pk));
            composite_backward(&col_p, &g_chat_p, &al_p, &trn_p, &mut g_col, &mut g_wp);
            weights_to_sigma_grad(&g_wp, &al_p, &trn_p, &mut g_sig);
            let g_up = model
                .field
                .backward(ftr_p.as_ref().expect("field trace"), &g_sig, &g_col);
            let mut g_big_p = Array2::<R>::zeros((pb * pk, latent_dim));
            model.mapping.backward_forward(&tr_p, &g_up, &mut g_big_p);
            accumulate_psi_rows(&mut g_psi_all, batch.frame_row(pair.i), &g_big_p);
        }
    }

    if backward {
        model
            .latent
            .backward(latent_trace.as_ref().expect("latent trace"), &g_psi_all);
    }

    let lambdas = (w.pho, w.reg, w.pgrad, w.zrange);
    Ok(super::loss::total_loss(
        sums.flow, sums.pho, sums.reg, sums.pgrad, sums.zrange, lambdas.0, lambdas.1, lambdas.2,
        lambdas.3,
    ))
}

fn accumulate_psi_rows<R: Real>(g_psi_all: &mut Array2<R>, row: usize, g_big: &Array2<R>) {
    for r in 0..g_big.dim().0 {
        for c in 0..g_big.dim().1 {
            g_psi_all[(row, c)] = g_psi_all[(row, c)] + g_big[(r, c)];
        }
    }
}

/// Training-mode composited flow predictions for one frame pair at given
/// query pixels (used by error-map refreshes).
pub fn predict_flows<R: Real>(
    model: &OmniMotionModel<R>,
    queries: &Array2<R>,
    depths: &Array2<R>,
    t_i: f64,
    t_j: f64,
) -> Result<Array2<R>> {
    let (b, k) = depths.dim();
    let psi_i = model.latent_code(t_i);
    let psi_j = model.latent_code(t_j);
    let x = ray_matrix(queries, depths);
    let big_i = broadcast_psi(&psi_i, b * k);
    let big_j = broadcast_psi(&psi_j, b * k);
    let u = model.mapping.forward(&x, &big_i.view(), None)?;
    let (sigma, _color) = model.query_canonical(&u);
    let y = model.mapping.inverse(&u, &big_j.view(), None)?;
    let (alpha, trans) = alpha_trans(&sigma, b, k);
    let xhat = composite(&y, &alpha, &trans);
    let mut flows = Array2::zeros((b, 2));
    for r in 0..b {
        flows[(r, 0)] = xhat[(r, 0)] - queries[(r, 0)];
        flows[(r, 1)] = xhat[(r, 1)] - queries[(r, 1)];
    }
    Ok(flows)
}

/// HashMap keyed by (i, j) is the working-set type for collected flows.
pub type FlowMap = HashMap<(usize, usize), crate::flow::FlowField>;
