use super::RealVector;
use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor};

pub struct ModReluCache {
    input: ComplexTensor,
    axis: usize,
}

fn split(dims: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= dims.len() {
        return Err(Error::Axis {
            axis,
            ndim: dims.len(),
        });
    }
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

/// `relu(|z| + b) z / |z|` with one real offset per channel along `axis`;
/// zero maps to zero.
pub fn modrelu(x: &ComplexTensor, bias: &RealVector, axis: usize) -> Result<(ComplexTensor, ModReluCache)> {
    let (outer, ch, inner) = split(x.dims(), axis)?;
    if bias.0.len() != ch {
        return Err(Error::shape(bias.0.dims(), &[ch], "modrelu bias vs channels"));
    }
    let b = bias.values();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for c in 0..ch {
            let start = (o * ch + c) * inner;
            for z in &mut data[start..start + inner] {
                let m = z.norm();
                *z = if m == 0.0 || m + b[c] <= 0.0 {
                    c64::new(0.0, 0.0)
                } else {
                    *z * ((m + b[c]) / m)
                };
            }
        }
    }
    Ok((
        out,
        ModReluCache {
            input: x.clone(),
            axis,
        },
    ))
}

/// Cotangents of input and offsets. Inactive entries (including the
/// boundary `|z| + b = 0`) pass no gradient.
pub fn modrelu_backward(
    cache: &ModReluCache,
    bias: &RealVector,
    g: &ComplexTensor,
) -> Result<(ComplexTensor, RealVector)> {
    cache.input.check_same_dims(g, "modrelu upstream")?;
    let (outer, ch, inner) = split(g.dims(), cache.axis)?;
    let b = bias.values();
    let mut gx = ComplexTensor::zeros(g.dims());
    let mut gb = vec![0.0; ch];
    let (xd, gd) = (cache.input.data(), g.data());
    let gxd = gx.data_mut();
    for o in 0..outer {
        for c in 0..ch {
            let start = (o * ch + c) * inner;
            for i in start..start + inner {
                let z = xd[i];
                let m = z.norm();
                if m == 0.0 || m + b[c] <= 0.0 {
                    continue;
                }
                // f = z + b z/|z|; the phase term only moves tangentially
                let ph = z / m;
                let gv = gd[i];
                let tangential = -(gv.conj() * ph).im / m;
                gxd[i] = gv + c64::new(0.0, b[c] * tangential) * ph;
                gb[c] += (gv.conj() * ph).re;
            }
        }
    }
    Ok((gx, RealVector::from_values(&gb)))
}
