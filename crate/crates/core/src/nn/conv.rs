use super::{complex_init, dims5, join, ParamKind, Params};
use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor, Rng};

/// Kernel `(out, in, k0, k1, k2)` with odd extents and an optional
/// per-output-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub kernel: ComplexTensor,
    pub bias: Option<ComplexTensor>,
}

impl ConvWeights {
    pub fn new(kernel: ComplexTensor, bias: Option<ComplexTensor>) -> Result<Self> {
        if kernel.ndim() != 5 {
            return Err(Error::shape(kernel.dims(), &[0; 5], "conv kernel must be 5-D"));
        }
        if kernel.dims()[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::config(format!(
                "conv kernel extents must be odd, got {:?}",
                &kernel.dims()[2..]
            )));
        }
        if let Some(b) = &bias {
            if b.dims() != [kernel.dims()[0]] {
                return Err(Error::shape(b.dims(), &[kernel.dims()[0]], "conv bias"));
            }
        }
        Ok(ConvWeights { kernel, bias })
    }

    pub fn random(out: usize, inp: usize, k: [usize; 3], bias: bool, gain: f64, rng: &mut Rng) -> Self {
        let fan_in = inp * k[0] * k[1] * k[2];
        let kernel = complex_init(&[out, inp, k[0], k[1], k[2]], fan_in, gain, rng);
        let bias = bias.then(|| ComplexTensor::zeros(&[out]));
        ConvWeights::new(kernel, bias).expect("odd kernel")
    }

    pub fn zeros(out: usize, inp: usize, k: [usize; 3], bias: bool) -> Self {
        let kernel = ComplexTensor::zeros(&[out, inp, k[0], k[1], k[2]]);
        ConvWeights::new(kernel, bias.then(|| ComplexTensor::zeros(&[out]))).expect("odd kernel")
    }

    /// Kernel with a single centre tap of 1 mapping channel `i` to `i`.
    pub fn identity(channels: usize, k: [usize; 3]) -> Self {
        let mut kernel = ComplexTensor::zeros(&[channels, channels, k[0], k[1], k[2]]);
        for c in 0..channels {
            kernel.set(&[c, c, k[0] / 2, k[1] / 2, k[2] / 2], c64::new(1.0, 0.0));
        }
        ConvWeights::new(kernel, None).expect("odd kernel")
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[1]
    }
}

impl Params for ConvWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        f(&join(prefix, "kernel"), &self.kernel, ParamKind::Complex);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Complex);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        f(&join(prefix, "kernel"), &mut self.kernel, ParamKind::Complex);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Complex);
        }
    }
}

/// Calls `f(dst, src, len)` for every contiguous run of positions `p` in a
/// `d0 x d1 x d2` volume such that `p + shift` is also inside it; `dst` is
/// the flat offset of `p` and `src` that of `p + shift`.
fn shifted_rows(d: [usize; 3], shift: [isize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let range = |n: usize, s: isize| {
        let lo = (-s).max(0) as usize;
        let hi = (n as isize - s).min(n as isize).max(0) as usize;
        (lo, hi)
    };
    let (a0, b0) = range(d[0], shift[0]);
    let (a1, b1) = range(d[1], shift[1]);
    let (a2, b2) = range(d[2], shift[2]);
    if a2 >= b2 {
        return;
    }
    for p0 in a0..b0 {
        let q0 = (p0 as isize + shift[0]) as usize;
        for p1 in a1..b1 {
            let q1 = (p1 as isize + shift[1]) as usize;
            let dst = (p0 * d[1] + p1) * d[2] + a2;
            let src = (q0 * d[1] + q1) * d[2] + (a2 as isize + shift[2]) as usize;
            f(dst, src, b2 - a2);
        }
    }
}

fn tap_shift(k: [usize; 3], kd: [usize; 3]) -> [isize; 3] {
    [
        k[0] as isize - (kd[0] / 2) as isize,
        k[1] as isize - (kd[1] / 2) as isize,
        k[2] as isize - (kd[2] / 2) as isize,
    ]
}

fn taps(kd: [usize; 3]) -> impl Iterator<Item = (usize, [usize; 3])> {
    let n = kd[0] * kd[1] * kd[2];
    (0..n).map(move |t| (t, [t / (kd[1] * kd[2]), (t / kd[2]) % kd[1], t % kd[2]]))
}

/// Zero-padded "same" complex cross-correlation over the three trailing
/// axes: `out[n,o,p] = b[o] + sum_{i,k} W[o,i,k] x[n,i,p+k-c]`.
pub fn conv3d(x: &ComplexTensor, w: &ConvWeights) -> Result<ComplexTensor> {
    let [n, ci, d0, d1, d2] = dims5(x)?;
    if ci != w.in_channels() {
        return Err(Error::shape(x.dims(), w.kernel.dims(), "conv input channels"));
    }
    let co = w.out_channels();
    let kd = [w.kernel.dims()[2], w.kernel.dims()[3], w.kernel.dims()[4]];
    let vol = d0 * d1 * d2;
    let ntaps = kd[0] * kd[1] * kd[2];
    let mut out = ComplexTensor::zeros(&[n, co, d0, d1, d2]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = w.kernel.data();
    for b in 0..n {
        for o in 0..co {
            let dst = &mut od[(b * co + o) * vol..(b * co + o + 1) * vol];
            if let Some(bias) = &w.bias {
                let bv = bias.data()[o];
                dst.iter_mut().for_each(|v| *v = bv);
            }
            for i in 0..ci {
                let src = &xd[(b * ci + i) * vol..(b * ci + i + 1) * vol];
                for (t, k) in taps(kd) {
                    let wv = wd[(o * ci + i) * ntaps + t];
                    if wv == c64::new(0.0, 0.0) {
                        continue;
                    }
                    shifted_rows([d0, d1, d2], tap_shift(k, kd), |p, q, len| {
                        for (acc, &v) in dst[p..p + len].iter_mut().zip(&src[q..q + len]) {
                            *acc += wv * v;
                        }
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Cotangents of the input and the weights for [`conv3d`].
pub fn conv3d_backward(
    x: &ComplexTensor,
    w: &ConvWeights,
    g: &ComplexTensor,
) -> Result<(ComplexTensor, ConvWeights)> {
    let [n, ci, d0, d1, d2] = dims5(x)?;
    let co = w.out_channels();
    if g.dims() != [n, co, d0, d1, d2] {
        return Err(Error::shape(g.dims(), &[n, co, d0, d1, d2], "conv upstream"));
    }
    let kd = [w.kernel.dims()[2], w.kernel.dims()[3], w.kernel.dims()[4]];
    let vol = d0 * d1 * d2;
    let ntaps = kd[0] * kd[1] * kd[2];
    let mut gx = ComplexTensor::zeros(x.dims());
    let mut gk = ComplexTensor::zeros(w.kernel.dims());
    let (xd, gd, wd) = (x.data(), g.data(), w.kernel.data());
    {
        let gxd = gx.data_mut();
        let gkd = gk.data_mut();
        for b in 0..n {
            for o in 0..co {
                let up = &gd[(b * co + o) * vol..(b * co + o + 1) * vol];
                for i in 0..ci {
                    let src = &xd[(b * ci + i) * vol..(b * ci + i + 1) * vol];
                    let gsrc = &mut gxd[(b * ci + i) * vol..(b * ci + i + 1) * vol];
                    for (t, k) in taps(kd) {
                        let widx = (o * ci + i) * ntaps + t;
                        let wc = wd[widx].conj();
                        let mut acc = c64::new(0.0, 0.0);
                        shifted_rows([d0, d1, d2], tap_shift(k, kd), |p, q, len| {
                            for (&gv, &xv) in up[p..p + len].iter().zip(&src[q..q + len]) {
                                acc += gv * xv.conj();
                            }
                            for (acc_x, &gv) in gsrc[q..q + len].iter_mut().zip(&up[p..p + len]) {
                                *acc_x += wc * gv;
                            }
                        });
                        gkd[widx] += acc;
                    }
                }
            }
        }
    }
    let gb = w.bias.as_ref().map(|_| {
        let mut gb = ComplexTensor::zeros(&[co]);
        for b in 0..n {
            for o in 0..co {
                let s: c64 = gd[(b * co + o) * vol..(b * co + o + 1) * vol].iter().sum();
                gb.data_mut()[o] += s;
            }
        }
        gb
    });
    Ok((gx, ConvWeights { kernel: gk, bias: gb }))
}

/// 2D+t convolution: a spatial `(1, k, k)` convolution followed by a
/// temporal `(kt, 1, 1)` convolution on `(1, channel, time, x, y)` maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dt {
    pub spatial: ConvWeights,
    pub temporal: ConvWeights,
}

pub struct Conv2dtCache {
    input: ComplexTensor,
    mid: ComplexTensor,
}

impl Conv2dt {
    pub fn random(out: usize, inp: usize, spatial_k: usize, temporal_k: usize, bias: bool, gain: f64, rng: &mut Rng) -> Self {
        Conv2dt {
            spatial: ConvWeights::random(out, inp, [1, spatial_k, spatial_k], bias, gain, rng),
            temporal: ConvWeights::random(out, out, [temporal_k, 1, 1], bias, 1.0, rng),
        }
    }

    pub fn zeros(out: usize, inp: usize, spatial_k: usize, temporal_k: usize, bias: bool) -> Self {
        Conv2dt {
            spatial: ConvWeights::zeros(out, inp, [1, spatial_k, spatial_k], bias),
            temporal: ConvWeights::zeros(out, out, [temporal_k, 1, 1], bias),
        }
    }

    pub fn new(spatial: ConvWeights, temporal: ConvWeights) -> Result<Self> {
        let sk = spatial.kernel.dims();
        let tk = temporal.kernel.dims();
        if sk[2] != 1 || tk[3] != 1 || tk[4] != 1 {
            return Err(Error::config("2D+t kernels must be (1,k,k) spatial and (kt,1,1) temporal"));
        }
        if tk[1] != sk[0] {
            return Err(Error::shape(sk, tk, "temporal conv input channels"));
        }
        Ok(Conv2dt { spatial, temporal })
    }

    pub fn out_channels(&self) -> usize {
        self.temporal.out_channels()
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<(ComplexTensor, Conv2dtCache)> {
        let mid = conv3d(x, &self.spatial)?;
        let out = conv3d(&mid, &self.temporal)?;
        Ok((
            out,
            Conv2dtCache {
                input: x.clone(),
                mid,
            },
        ))
    }

    pub fn backward(&self, cache: &Conv2dtCache, g: &ComplexTensor) -> Result<(ComplexTensor, Conv2dt)> {
        let (gmid, gt) = conv3d_backward(&cache.mid, &self.temporal, g)?;
        let (gx, gs) = conv3d_backward(&cache.input, &self.spatial, &gmid)?;
        Ok((gx, Conv2dt { spatial: gs, temporal: gt }))
    }
}

impl Params for Conv2dt {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.spatial.visit(&join(prefix, "spatial"), f);
        self.temporal.visit(&join(prefix, "temporal"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.spatial.visit_mut(&join(prefix, "spatial"), f);
        self.temporal.visit_mut(&join(prefix, "temporal"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gradcheck::{check_params, check_tensor};

    /// Direct loop over every output position, input channel and tap.
    fn naive_conv(x: &ComplexTensor, w: &ConvWeights) -> ComplexTensor {
        let [n, ci, d0, d1, d2] = dims5(x).unwrap();
        let kd = &w.kernel.dims()[2..];
        let co = w.out_channels();
        let mut out = ComplexTensor::zeros(&[n, co, d0, d1, d2]);
        for b in 0..n {
            for o in 0..co {
                for p0 in 0..d0 {
                    for p1 in 0..d1 {
                        for p2 in 0..d2 {
                            let mut acc = w.bias.as_ref().map_or(c64::new(0.0, 0.0), |bb| bb.data()[o]);
                            for i in 0..ci {
                                for k0 in 0..kd[0] {
                                    for k1 in 0..kd[1] {
                                        for k2 in 0..kd[2] {
                                            let q0 = p0 as isize + k0 as isize - (kd[0] / 2) as isize;
                                            let q1 = p1 as isize + k1 as isize - (kd[1] / 2) as isize;
                                            let q2 = p2 as isize + k2 as isize - (kd[2] / 2) as isize;
                                            if q0 < 0 || q1 < 0 || q2 < 0 || q0 >= d0 as isize || q1 >= d1 as isize || q2 >= d2 as isize {
                                                continue;
                                            }
                                            acc += w.kernel.get(&[o, i, k0, k1, k2])
                                                * x.get(&[b, i, q0 as usize, q1 as usize, q2 as usize]);
                                        }
                                    }
                                }
                            }
                            out.set(&[b, o, p0, p1, p2], acc);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Rng::new(1);
        let x = rng.complex_tensor(&[1, 1, 3, 3, 3]);
        let w = ConvWeights::new(rng.complex_tensor(&[1, 1, 3, 3, 3]), None).unwrap();
        assert!(conv3d(&x, &w).unwrap().max_abs_diff(&naive_conv(&x, &w)).unwrap() < 1e-12);

        let x = rng.complex_tensor(&[2, 3, 4, 5, 6]);
        let w = ConvWeights::new(rng.complex_tensor(&[2, 3, 3, 1, 5]), Some(rng.complex_tensor(&[2]))).unwrap();
        assert!(conv3d(&x, &w).unwrap().max_abs_diff(&naive_conv(&x, &w)).unwrap() < 1e-12);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(2);
        let x = rng.complex_tensor(&[1, 2, 4, 6, 6]);
        let layer = Conv2dt::new(ConvWeights::identity(2, [1, 5, 5]), ConvWeights::identity(2, [3, 1, 1])).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn is_linear() {
        let mut rng = Rng::new(3);
        let layer = Conv2dt::random(3, 2, 5, 3, false, 1.0, &mut rng);
        let x1 = rng.complex_tensor(&[1, 2, 4, 6, 6]);
        let x2 = rng.complex_tensor(&[1, 2, 4, 6, 6]);
        let a = c64::new(0.7, -1.3);
        let lhs = layer.forward(&x1.scale_complex(a).add(&x2).unwrap()).unwrap().0;
        let rhs = layer
            .forward(&x1)
            .unwrap()
            .0
            .scale_complex(a)
            .add(&layer.forward(&x2).unwrap().0)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn equals_spatial_then_temporal() {
        let mut rng = Rng::new(4);
        let layer = Conv2dt::random(2, 2, 3, 3, true, 1.0, &mut rng);
        let x = rng.complex_tensor(&[1, 2, 5, 4, 4]);
        let (y, _) = layer.forward(&x).unwrap();
        let two_step = naive_conv(&naive_conv(&x, &layer.spatial), &layer.temporal);
        assert!(y.max_abs_diff(&two_step).unwrap() < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let w = ConvWeights::new(rng.complex_tensor(&[3, 2, 3, 3, 3]), None).unwrap();
            let x = rng.complex_tensor(&[2, 2, 3, 4, 5]);
            let y = rng.complex_tensor(&[2, 3, 3, 4, 5]);
            let lhs = conv3d(&x, &w).unwrap().inner(&y).unwrap();
            let (gx, _) = conv3d_backward(&x, &w, &y).unwrap();
            let rhs = x.inner(&gx).unwrap();
            assert!((lhs - rhs).norm() / lhs.norm() < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch() {
        let w = ConvWeights::zeros(2, 3, [1, 3, 3], false);
        let err = conv3d(&ComplexTensor::zeros(&[1, 2, 2, 4, 4]), &w).unwrap_err();
        assert_eq!(err.category(), "shape");
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvWeights::new(ComplexTensor::zeros(&[1, 1, 1, 2, 3]), None).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let layer = Conv2dt::random(2, 2, 3, 3, true, 1.0, &mut rng);
        let x = rng.complex_tensor(&[1, 2, 2, 2, 2]);
        let c = rng.complex_tensor(&[1, 2, 2, 2, 2]);
        let (_, cache) = layer.forward(&x).unwrap();
        let (gx, gw) = layer.backward(&cache, &c).unwrap();
        let err = check_tensor(&x, &gx, ParamKind::Complex, 5, &mut rng, |x| {
            c.real_inner(&layer.forward(x).unwrap().0).unwrap()
        });
        assert!(err < 1e-6, "input {err}");
        for (name, err) in check_params(&layer, &gw, 5, &mut rng, |l| {
            c.real_inner(&l.forward(&x).unwrap().0).unwrap()
        }) {
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}
