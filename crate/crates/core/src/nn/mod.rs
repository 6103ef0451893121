//! Complex-valued layers with explicit backward passes.
//!
//! Feature maps are 5-D: `(batch, channel, d0, d1, d2)`. The image network
//! uses `(1, channel, time, x, y)`; the k-space network uses
//! `(time, channel, coil, kx, ky)`. Each layer's `forward` returns its output
//! together with whatever the matching `backward` needs.

mod activation;
mod attention;
mod conv;
mod pool;

pub use activation::{modrelu, modrelu_backward, ModReluCache};
pub use attention::{se_attention, se_attention_backward, AttentionCache, AttentionWeights, Dense, REDUCTION};
pub use conv::{conv3d, conv3d_backward, Conv2dt, Conv2dtCache, ConvWeights};
pub use pool::{maxpool3d, maxpool3d_backward, upsample3d, upsample3d_backward, PoolCache, UpsampleCache};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Rng};

/// Whether a parameter tensor carries complex values or real values stored
/// with zero imaginary parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Complex,
    Real,
}

impl ParamKind {
    /// Real degrees of freedom per element.
    pub fn dof(self) -> usize {
        match self {
            ParamKind::Complex => 2,
            ParamKind::Real => 1,
        }
    }
}

/// Named traversal of every parameter tensor. Gradients use the same type as
/// the parameters, so two values of one type visit matching tensors in the
/// same order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind));

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t, _| {
            *t = ComplexTensor::zeros(t.dims());
        });
        z
    }

    /// Real scalar degrees of freedom; complex entries count twice.
    fn count_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, kind| n += t.len() * kind.dof());
        n
    }

    fn named_tensors(&self) -> Vec<(String, ComplexTensor, ParamKind)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, kind| out.push((name.to_string(), t.clone(), kind)));
        out
    }
}

/// `prefix.name`, or `name` when the prefix is empty.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Params> Params for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

impl<T: Params> Params for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Real per-channel bias vector (ModReLU offsets).
#[derive(Clone, Debug, PartialEq)]
pub struct RealVector(pub ComplexTensor);

impl RealVector {
    pub fn zeros(n: usize) -> Self {
        RealVector(ComplexTensor::zeros(&[n]))
    }

    pub fn from_values(values: &[f64]) -> Self {
        RealVector(ComplexTensor::from_real(&[values.len()], values).expect("1-D"))
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.data().iter().map(|v| v.re).collect()
    }
}

impl Params for RealVector {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        f(prefix, &self.0, ParamKind::Real);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        f(prefix, &mut self.0, ParamKind::Real);
    }
}

/// Real scalar parameter, stored as a one-element tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RealScalar(pub ComplexTensor);

impl RealScalar {
    pub fn new(v: f64) -> Self {
        RealScalar(ComplexTensor::scalar(v))
    }

    pub fn get(&self) -> f64 {
        self.0.data()[0].re
    }

    pub fn set(&mut self, v: f64) {
        self.0.data_mut()[0].re = v;
    }
}

impl Params for RealScalar {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        f(prefix, &self.0, ParamKind::Real);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        f(prefix, &mut self.0, ParamKind::Real);
    }
}

/// Complex Gaussian weights with `E|w|^2 = gain^2 / fan_in`.
pub fn complex_init(dims: &[usize], fan_in: usize, gain: f64, rng: &mut Rng) -> ComplexTensor {
    rng.complex_tensor(dims).scale(gain / (fan_in as f64).sqrt())
}

/// Real Gaussian weights with variance `gain^2 / fan_in`.
pub fn real_init(dims: &[usize], fan_in: usize, gain: f64, rng: &mut Rng) -> ComplexTensor {
    rng.real_tensor(dims).scale(gain / (fan_in as f64).sqrt())
}

pub(crate) fn dims5(t: &ComplexTensor) -> Result<[usize; 5]> {
    match *t.dims() {
        [a, b, c, d, e] => Ok([a, b, c, d, e]),
        _ => Err(Error::shape(t.dims(), &[0; 5], "feature maps are 5-D")),
    }
}
