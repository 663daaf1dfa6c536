//! Finite-difference gradient verification helpers, used by unit tests and
//! the acceptance suite.

use ndarray::Array2;

use super::params::{ParamGroup, ParamVisitor, Real};

/// Central-difference check of an input gradient. Panics with context on
/// mismatch. `f` evaluates the scalar objective, `analytic` returns dL/dx.
pub fn grad_check_input<F, G>(x: &Array2<f64>, f: F, analytic: G, h: f64, tol: f64)
where
    F: Fn(&Array2<f64>) -> f64,
    G: Fn(&Array2<f64>) -> Array2<f64>,
{
    let g = analytic(x);
    assert_eq!(g.dim(), x.dim());
    for idx in ndarray::indices(x.dim()) {
        let mut xp = x.clone();
        xp[idx] += h;
        let mut xm = x.clone();
        xm[idx] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        let a = g[idx];
        let denom = fd.abs().max(a.abs()).max(1.0);
        assert!(
            (fd - a).abs() / denom < tol,
            "input grad mismatch at {:?}: analytic {a}, fd {fd}",
            idx
        );
    }
}

/// Result of one sampled-parameter comparison.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

/// Visitor that perturbs a single flattened parameter by +/- delta.
pub struct Perturb {
    pub target: usize,
    pub delta: f64,
    cursor: usize,
    pub hit: bool,
}

impl Perturb {
    pub fn new(target: usize, delta: f64) -> Self {
        Perturb {
            target,
            delta,
            cursor: 0,
            hit: false,
        }
    }
}

impl<R: Real> ParamVisitor<R> for Perturb {
    fn visit(&mut self, _name: &str, _group: ParamGroup, value: &mut [R], _grad: &mut [R]) {
        let start = self.cursor;
        let end = start + value.len();
        if self.target >= start && self.target < end {
            value[self.target - start] = value[self.target - start] + R::c(self.delta);
            self.hit = true;
        }
        self.cursor = end;
    }
}

/// Visitor that reads the gradient (and name) of a single flattened parameter.
pub struct ReadGrad {
    pub target: usize,
    cursor: usize,
    pub grad: f64,
    pub value: f64,
    pub name: String,
}

impl ReadGrad {
    pub fn new(target: usize) -> Self {
        ReadGrad {
            target,
            cursor: 0,
            grad: 0.0,
            value: 0.0,
            name: String::new(),
        }
    }
}

impl<R: Real> ParamVisitor<R> for ReadGrad {
    fn visit(&mut self, name: &str, _group: ParamGroup, value: &mut [R], grad: &mut [R]) {
        let start = self.cursor;
        let end = start + value.len();
        if self.target >= start && self.target < end {
            self.grad = grad[self.target - start].to_f64_();
            self.value = value[self.target - start].to_f64_();
            self.name = format!("{name}[{}]", self.target - start);
        }
        self.cursor = end;
    }
}

/// Relative error with an absolute floor, as used by the acceptance criteria.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
