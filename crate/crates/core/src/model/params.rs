//! Scalar abstraction and parameter traversal.
//!
//! The model is generic over the float type: training runs in f32, gradient
//! verification in f64. Every learnable array is visited through
//! [`ParamVisitor`] in a fixed order, which the optimizer, checkpointing and
//! the finite-difference harness all rely on.

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::Rng;

/// Float scalar used by the model (f32 or f64).
pub trait Real: NdFloat + FromPrimitive {
    /// Shorthand for converting an f64 literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn to_f64_(self) -> f64;
}

impl Real for f32 {
    fn to_f64_(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64_(self) -> f64 {
        self
    }
}

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Canonical density/color field.
    Field,
    /// Invertible mapping network.
    Mapping,
    /// Per-frame latent code generator.
    Latent,
}

/// Callback over every (parameter, gradient) pair of a module tree.
pub trait ParamVisitor<R: Real> {
    fn visit(&mut self, name: &str, group: ParamGroup, value: &mut [R], grad: &mut [R]);
}

/// Anything holding learnable parameters.
pub trait Parameterized<R: Real> {
    fn visit_params(&mut self, prefix: &str, group: ParamGroup, v: &mut dyn ParamVisitor<R>);
}

/// Zeroes all gradients.
pub struct ZeroGrads;

impl<R: Real> ParamVisitor<R> for ZeroGrads {
    fn visit(&mut self, _name: &str, _group: ParamGroup, _value: &mut [R], grad: &mut [R]) {
        for g in grad.iter_mut() {
            *g = R::zero();
        }
    }
}

/// Collects flattened (name, group, len) descriptors in visit order.
#[derive(Default)]
pub struct ParamIndex {
    pub entries: Vec<(String, ParamGroup, usize)>,
}

impl<R: Real> ParamVisitor<R> for ParamIndex {
    fn visit(&mut self, name: &str, group: ParamGroup, value: &mut [R], _grad: &mut [R]) {
        self.entries.push((name.to_string(), group, value.len()));
    }
}

/// Uniform sample in [-limit, limit] converted to R.
pub fn uniform<R: Real>(rng: &mut impl Rng, limit: f64) -> R {
    R::c(rng.gen_range(-limit..limit))
}

/// Standard normal scaled by `std`, converted to R.
pub fn normal<R: Real>(rng: &mut impl Rng, std: f64) -> R {
    use rand_distr::{Distribution, StandardNormal};
    let z: f64 = StandardNormal.sample(rng);
    R::c(z * std)
}
