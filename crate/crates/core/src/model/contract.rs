//! Scene contraction applied to canonical coordinates before the field.
//!
//! Points inside the unit ball pass through; outside, u maps to
//! (2 - 1/|u|) * u/|u|, so every output lies inside radius 2.

use ndarray::Array2;

use super::params::Real;

pub fn contract<R: Real>(u: &Array2<R>) -> Array2<R> {
    let (n, d) = u.dim();
    let mut out = u.clone();
    for r in 0..n {
        let mut sq = R::zero();
        for c in 0..d {
            sq = sq + u[(r, c)] * u[(r, c)];
        }
        let norm = sq.sqrt();
        if norm > R::one() {
            let g = (R::c(2.0) - norm.recip()) / norm;
            for c in 0..d {
                out[(r, c)] = u[(r, c)] * g;
            }
        }
    }
    out
}

/// Gradient of a scalar w.r.t. u given its gradient w.r.t. contract(u).
pub fn contract_backward<R: Real>(u: &Array2<R>, gy: &Array2<R>) -> Array2<R> {
    let (n, d) = u.dim();
    let mut gx = gy.clone();
    for r in 0..n {
        let mut sq = R::zero();
        for c in 0..d {
            sq = sq + u[(r, c)] * u[(r, c)];
        }
        let norm = sq.sqrt();
        if norm > R::one() {
            // y = g(r) u with g = 2/r - 1/r^2; dy/du = g I + (g'(r)/r) u u^T
            let g = R::c(2.0) / norm - (norm * norm).recip();
            let gp = (-R::c(2.0) / (norm * norm)) + R::c(2.0) / (norm * norm * norm);
            let mut dot = R::zero();
            for c in 0..d {
                dot = dot + gy[(r, c)] * u[(r, c)];
            }
            let coeff = gp / norm * dot;
            for c in 0..d {
                gx[(r, c)] = g * gy[(r, c)] + coeff * u[(r, c)];
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::grad_check_input;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inside_unit_ball_is_identity() {
        let u = ndarray::array![[0.5f64, 0.0, 0.0], [0.1, -0.2, 0.3]];
        assert_eq!(contract(&u), u);
    }

    #[test]
    fn outside_point_matches_formula() {
        let u = ndarray::array![[2.0f64, 0.0, 0.0]];
        let v = contract(&u);
        assert!((v[(0, 0)] - 1.5).abs() < 1e-12);
        assert_eq!(v[(0, 1)], 0.0);
    }

    #[test]
    fn output_norm_always_below_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100_000 {
            let scale = 10f64.powf(rng.gen_range(-3.0..6.0));
            let u = ndarray::arr2(&[[
                rng.gen_range(-1.0..1.0) * scale,
                rng.gen_range(-1.0..1.0) * scale,
                rng.gen_range(-1.0..1.0) * scale,
            ]]);
            let v = contract(&u);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm < 2.0, "norm {norm} for input scale {scale}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let u = ndarray::array![[1.7f64, -0.4, 0.9], [0.2, 0.1, -0.3], [3.0, 2.0, -5.0]];
        grad_check_input(
            &u,
            |u| contract(u).iter().map(|v| v * v * 0.5).sum(),
            |u| contract_backward(u, &contract(u)),
            1e-6,
            1e-7,
        );
    }
}
