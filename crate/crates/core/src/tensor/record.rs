//! Differentiable forms of the tensor primitives.
//!
//! Cotangents follow one convention throughout the crate: for a real scalar
//! loss `L` and complex `z`, the cotangent of `z` is `dL/dRe(z) + i dL/dIm(z)`.
//! Stepping against it descends `L`, and for a C-linear map `z -> w z` the
//! input cotangent is `conj(w) g`.

use super::{c64, fft2_centered, ifft2_centered, ComplexTensor, ElementwiseKind};
use crate::error::{Error, Result};

/// A primal value with its cotangent.
#[derive(Clone, Debug)]
pub struct GradPair {
    pub primal: ComplexTensor,
    pub cotangent: ComplexTensor,
}

impl GradPair {
    pub fn new(primal: ComplexTensor, cotangent: ComplexTensor) -> Result<Self> {
        primal.check_same_dims(&cotangent, "grad pair")?;
        Ok(GradPair { primal, cotangent })
    }

    pub fn zeros_like(primal: ComplexTensor) -> Self {
        let cotangent = ComplexTensor::zeros(primal.dims());
        GradPair { primal, cotangent }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Elementwise(ElementwiseKind),
    Fft2 { axes: (usize, usize) },
    Ifft2 { axes: (usize, usize) },
}

/// What a recorded forward call keeps for its backward pass.
#[derive(Clone, Debug)]
pub struct OpRecord {
    kind: OpKind,
    out_dims: Vec<usize>,
    saved: Vec<ComplexTensor>,
}

/// Run `kind` forward and keep what its backward needs.
pub fn record(
    kind: OpKind,
    a: &ComplexTensor,
    b: Option<&ComplexTensor>,
) -> Result<(ComplexTensor, OpRecord)> {
    let (out, saved) = match kind {
        OpKind::Elementwise(ek) => {
            let out = ComplexTensor::elementwise(ek, a, b)?;
            let saved = match ek {
                ElementwiseKind::Mul => vec![a.clone(), b.expect("checked above").clone()],
                ElementwiseKind::Abs => vec![a.clone()],
                _ => Vec::new(),
            };
            (out, saved)
        }
        OpKind::Fft2 { axes } => (fft2_centered(a, axes)?, Vec::new()),
        OpKind::Ifft2 { axes } => (ifft2_centered(a, axes)?, Vec::new()),
    };
    let out_dims = out.dims().to_vec();
    Ok((
        out,
        OpRecord {
            kind,
            out_dims,
            saved,
        },
    ))
}

impl OpRecord {
    pub fn kind(&self) -> OpKind {
        self.kind
    }

    /// Input cotangents, one per operand, given the output cotangent.
    pub fn backward(&self, upstream: &ComplexTensor) -> Result<Vec<ComplexTensor>> {
        if upstream.dims() != self.out_dims.as_slice() {
            return Err(Error::shape(upstream.dims(), &self.out_dims, "upstream cotangent"));
        }
        let g = upstream;
        Ok(match self.kind {
            OpKind::Elementwise(ek) => match ek {
                ElementwiseKind::Add => vec![g.clone(), g.clone()],
                ElementwiseKind::Sub => vec![g.clone(), g.scale(-1.0)],
                ElementwiseKind::Mul => {
                    let (a, b) = (&self.saved[0], &self.saved[1]);
                    vec![g.zip_map(b, |g, b| g * b.conj())?, g.zip_map(a, |g, a| g * a.conj())?]
                }
                ElementwiseKind::Conj => vec![g.conj()],
                ElementwiseKind::Abs => {
                    let a = &self.saved[0];
                    vec![g.zip_map(a, |g, a| {
                        let m = a.norm();
                        if m == 0.0 {
                            c64::new(0.0, 0.0)
                        } else {
                            a * (g.re / m)
                        }
                    })?]
                }
                ElementwiseKind::Scale(k) => vec![g.scale(k)],
                ElementwiseKind::ScaleComplex(w) => vec![g.scale_complex(w.conj())],
            },
            OpKind::Fft2 { axes } => vec![ifft2_centered(g, axes)?],
            OpKind::Ifft2 { axes } => vec![fft2_centered(g, axes)?],
        })
    }
}
