use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[allow(non_camel_case_types)]
pub type c64 = Complex64;

/// Dense row-major complex array.
#[derive(Clone, PartialEq)]
pub struct ComplexTensor {
    dims: Vec<usize>,
    data: Vec<c64>,
}

/// Elementwise operations. Binary kinds require equal dims; `Scale` and
/// `ScaleComplex` are the scalar-tensor forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Conj,
    Abs,
    Scale(f64),
    ScaleComplex(c64),
}

impl ComplexTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, c64::new(0.0, 0.0))
    }

    pub fn filled(dims: &[usize], value: c64) -> Self {
        let n = dims.iter().product();
        ComplexTensor {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<c64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(dims, &[data.len()], "element count"));
        }
        Ok(ComplexTensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn from_real(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(dims, data.iter().map(|&v| c64::new(v, 0.0)).collect())
    }

    pub fn scalar(value: f64) -> Self {
        ComplexTensor {
            dims: vec![1],
            data: vec![c64::new(value, 0.0)],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[c64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [c64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<c64> {
        self.data
    }

    /// Same values, new dims with the same element count.
    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(&self.dims, dims, "reshape"));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn check_same_dims(&self, other: &ComplexTensor, context: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(&self.dims, &other.dims, context));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(c64) -> c64) -> ComplexTensor {
        ComplexTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ComplexTensor,
        f: impl Fn(c64, c64) -> c64,
    ) -> Result<ComplexTensor> {
        self.check_same_dims(other, "elementwise")?;
        Ok(ComplexTensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn elementwise(
        kind: ElementwiseKind,
        a: &ComplexTensor,
        b: Option<&ComplexTensor>,
    ) -> Result<ComplexTensor> {
        let binary = || b.ok_or_else(|| Error::config(format!("{kind:?} needs two operands")));
        match kind {
            ElementwiseKind::Add => a.add(binary()?),
            ElementwiseKind::Sub => a.sub(binary()?),
            ElementwiseKind::Mul => a.mul(binary()?),
            ElementwiseKind::Conj => Ok(a.conj()),
            ElementwiseKind::Abs => Ok(a.abs()),
            ElementwiseKind::Scale(k) => Ok(a.scale(k)),
            ElementwiseKind::ScaleComplex(w) => Ok(a.scale_complex(w)),
        }
    }

    pub fn add(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn conj(&self) -> ComplexTensor {
        self.map(|v| v.conj())
    }

    pub fn abs(&self) -> ComplexTensor {
        self.map(|v| c64::new(v.norm(), 0.0))
    }

    pub fn scale(&self, k: f64) -> ComplexTensor {
        self.map(|v| v * k)
    }

    pub fn scale_complex(&self, w: c64) -> ComplexTensor {
        self.map(|v| v * w)
    }

    pub fn add_assign(&mut self, other: &ComplexTensor) -> Result<()> {
        self.check_same_dims(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// self += k * other
    pub fn axpy(&mut self, k: f64, other: &ComplexTensor) -> Result<()> {
        self.check_same_dims(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * k;
        }
        Ok(())
    }

    /// `<a, b> = sum conj(a) * b`.
    pub fn inner(&self, other: &ComplexTensor) -> Result<c64> {
        self.check_same_dims(other, "inner product")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(c64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b))
    }

    /// Real part of the inner product; the directional derivative pairing
    /// for cotangents stored as dL/dRe + i dL/dIm.
    pub fn real_inner(&self, other: &ComplexTensor) -> Result<f64> {
        self.check_same_dims(other, "inner product")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ComplexTensor) -> Result<f64> {
        self.check_same_dims(other, "difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> c64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: c64) {
        let o = self.offset(index);
        self.data[o] = value;
    }
}

impl fmt::Debug for ComplexTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexTensor(dims={:?}", self.dims)?;
        if self.data.len() <= 8 {
            write!(f, ", data={:?}", self.data)?;
        }
        write!(f, ")")
    }
}
