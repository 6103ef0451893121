use super::{dims5, ConvWeights};
use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor};

pub struct PoolCache {
    input_dims: Vec<usize>,
    argmax: Vec<usize>,
}

/// 2x2x2 max pooling over the three trailing axes, selecting the entry of
/// largest magnitude and keeping its complex value. Odd extents are padded
/// by repeating the last slice; ties go to the lowest flat index.
pub fn maxpool3d(x: &ComplexTensor) -> Result<(ComplexTensor, PoolCache)> {
    let nd = x.ndim();
    if nd < 3 {
        return Err(Error::shape(x.dims(), &[0, 0, 0], "pooling needs three trailing axes"));
    }
    let d = [x.dims()[nd - 3], x.dims()[nd - 2], x.dims()[nd - 1]];
    let lead: usize = x.dims()[..nd - 3].iter().product();
    let od = [d[0].div_ceil(2), d[1].div_ceil(2), d[2].div_ceil(2)];
    let mut out_dims = x.dims()[..nd - 3].to_vec();
    out_dims.extend_from_slice(&od);
    let vin = d[0] * d[1] * d[2];
    let vout = od[0] * od[1] * od[2];
    let mut out = ComplexTensor::zeros(&out_dims);
    let mut argmax = vec![0; lead * vout];
    let xd = x.data();
    let odata = out.data_mut();
    for l in 0..lead {
        for a in 0..od[0] {
            for b in 0..od[1] {
                for c in 0..od[2] {
                    let mut best = usize::MAX;
                    let mut best_mag = -1.0;
                    for i in 0..8 {
                        // replication padding: clamp to the last valid index
                        let p0 = (2 * a + (i >> 2)).min(d[0] - 1);
                        let p1 = (2 * b + ((i >> 1) & 1)).min(d[1] - 1);
                        let p2 = (2 * c + (i & 1)).min(d[2] - 1);
                        let idx = l * vin + (p0 * d[1] + p1) * d[2] + p2;
                        let m = xd[idx].norm();
                        if m > best_mag || (m == best_mag && idx < best) {
                            best_mag = m;
                            best = idx;
                        }
                    }
                    let o = l * vout + (a * od[1] + b) * od[2] + c;
                    odata[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_dims: x.dims().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output cotangent to its selected input entry.
pub fn maxpool3d_backward(cache: &PoolCache, g: &ComplexTensor) -> Result<ComplexTensor> {
    if g.len() != cache.argmax.len() {
        return Err(Error::shape(g.dims(), &cache.input_dims, "pool upstream"));
    }
    let mut gx = ComplexTensor::zeros(&cache.input_dims);
    let gxd = gx.data_mut();
    for (&idx, &gv) in cache.argmax.iter().zip(g.data()) {
        gxd[idx] += gv;
    }
    Ok(gx)
}

pub struct UpsampleCache {
    input: ComplexTensor,
}

/// Transpose convolution with a 1x1x1 kernel and stride 2 on
/// `(batch, channel, d0, d1, d2)` maps: input entry `p` lands at `2p`,
/// every other position is zero, and the result is cropped to `target`.
pub fn upsample3d(x: &ComplexTensor, w: &ConvWeights, target: [usize; 3]) -> Result<(ComplexTensor, UpsampleCache)> {
    let [n, ci, d0, d1, d2] = dims5(x)?;
    if w.kernel.dims()[2..] != [1, 1, 1] || w.in_channels() != ci {
        return Err(Error::shape(w.kernel.dims(), x.dims(), "upsample kernel"));
    }
    if target[0] > 2 * d0 || target[1] > 2 * d1 || target[2] > 2 * d2 {
        return Err(Error::shape(&target, &[2 * d0, 2 * d1, 2 * d2], "upsample target"));
    }
    let co = w.out_channels();
    let [t0, t1, t2] = target;
    let mut out = ComplexTensor::zeros(&[n, co, t0, t1, t2]);
    let (xd, wd) = (x.data(), w.kernel.data());
    let od = out.data_mut();
    for b in 0..n {
        for o in 0..co {
            for i in 0..ci {
                let wv = wd[o * ci + i];
                for a in 0..d0.min(t0.div_ceil(2)) {
                    for p in 0..d1.min(t1.div_ceil(2)) {
                        for q in 0..d2.min(t2.div_ceil(2)) {
                            let src = (((b * ci + i) * d0 + a) * d1 + p) * d2 + q;
                            let dst = (((b * co + o) * t0 + 2 * a) * t1 + 2 * p) * t2 + 2 * q;
                            od[dst] += wv * xd[src];
                        }
                    }
                }
            }
        }
    }
    Ok((out, UpsampleCache { input: x.clone() }))
}

pub fn upsample3d_backward(cache: &UpsampleCache, w: &ConvWeights, g: &ComplexTensor) -> Result<(ComplexTensor, ConvWeights)> {
    let x = &cache.input;
    let [n, ci, d0, d1, d2] = dims5(x)?;
    let [gn, co, t0, t1, t2] = dims5(g)?;
    if gn != n || co != w.out_channels() {
        return Err(Error::shape(g.dims(), x.dims(), "upsample upstream"));
    }
    let mut gx = ComplexTensor::zeros(x.dims());
    let mut gk = ComplexTensor::zeros(w.kernel.dims());
    let (xd, wd, gd) = (x.data(), w.kernel.data(), g.data());
    {
        let gxd = gx.data_mut();
        let gkd = gk.data_mut();
        for b in 0..n {
            for o in 0..co {
                for i in 0..ci {
                    let wc = wd[o * ci + i].conj();
                    let mut acc = c64::new(0.0, 0.0);
                    for a in 0..d0.min(t0.div_ceil(2)) {
                        for p in 0..d1.min(t1.div_ceil(2)) {
                            for q in 0..d2.min(t2.div_ceil(2)) {
                                let src = (((b * ci + i) * d0 + a) * d1 + p) * d2 + q;
                                let dst = (((b * co + o) * t0 + 2 * a) * t1 + 2 * p) * t2 + 2 * q;
                                gxd[src] += wc * gd[dst];
                                acc += gd[dst] * xd[src].conj();
                            }
                        }
                    }
                    gkd[o * ci + i] += acc;
                }
            }
        }
    }
    Ok((gx, ConvWeights { kernel: gk, bias: None }))
}
