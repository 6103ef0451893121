use super::{join, real_init, ParamKind, Params};
use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor, Rng};

/// Real fully connected layer `W s + b`, weights `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ComplexTensor,
    pub bias: ComplexTensor,
}

impl Dense {
    pub fn random(out: usize, inp: usize, gain: f64, rng: &mut Rng) -> Self {
        Dense {
            weight: real_init(&[out, inp], inp, gain, rng),
            bias: ComplexTensor::zeros(&[out]),
        }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            weight: ComplexTensor::zeros(&[out, inp]),
            bias: ComplexTensor::zeros(&[out]),
        }
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        let [out, inp] = [self.weight.dims()[0], self.weight.dims()[1]];
        let w = self.weight.data();
        let b = self.bias.data();
        (0..out)
            .map(|o| b[o].re + (0..inp).map(|i| w[o * inp + i].re * s[i]).sum::<f64>())
            .collect()
    }

    /// Returns the input cotangent and accumulates weight gradients into `grad`.
    fn backward(&self, s: &[f64], g: &[f64], grad: &mut Dense) -> Vec<f64> {
        let [out, inp] = [self.weight.dims()[0], self.weight.dims()[1]];
        let w = self.weight.data();
        let mut gs = vec![0.0; inp];
        let gw = grad.weight.data_mut();
        for o in 0..out {
            for i in 0..inp {
                gw[o * inp + i].re += g[o] * s[i];
                gs[i] += w[o * inp + i].re * g[o];
            }
        }
        for (gb, &go) in grad.bias.data_mut().iter_mut().zip(g) {
            gb.re += go;
        }
        gs
    }
}

impl Params for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Real);
        f(&join(prefix, "bias"), &self.bias, ParamKind::Real);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Real);
        f(&join(prefix, "bias"), &mut self.bias, ParamKind::Real);
    }
}

/// Squeeze-excitation weights for an attended axis of length `L`: the
/// descriptor has `2L` entries (real parts, then imaginary parts) and the
/// hidden layer `max(1, 2L / reduction)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub reduce: Dense,
    pub expand: Dense,
}

pub const REDUCTION: usize = 2;

fn hidden(len: usize) -> usize {
    (2 * len / REDUCTION).max(1)
}

impl AttentionWeights {
    pub fn random(len: usize, rng: &mut Rng) -> Self {
        let h = hidden(len);
        AttentionWeights {
            reduce: Dense::random(h, 2 * len, 1.0, rng),
            expand: Dense::random(2 * len, h, 1.0, rng),
        }
    }

    pub fn zeros(len: usize) -> Self {
        let h = hidden(len);
        AttentionWeights {
            reduce: Dense::zeros(h, 2 * len),
            expand: Dense::zeros(2 * len, h),
        }
    }

    pub fn len(&self) -> usize {
        self.reduce.weight.dims()[1] / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Params for AttentionWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
    }
}

pub struct AttentionCache {
    input: ComplexTensor,
    axis: usize,
    argmax: Vec<usize>,
    descriptor: Vec<f64>,
    pre_hidden: Vec<f64>,
    gates: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Flat indices grouped by their position along `axis`.
fn for_each_slot(dims: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    for o in 0..outer {
        for l in 0..len {
            let start = (o * len + l) * inner;
            for i in start..start + inner {
                f(l, i);
            }
        }
    }
}

/// Rescales the real and imaginary parts of every slice along `axis` by
/// learned gates computed from the slice-wise global maxima.
pub fn se_attention(x: &ComplexTensor, w: &AttentionWeights, axis: usize) -> Result<(ComplexTensor, AttentionCache)> {
    if axis >= x.ndim() {
        return Err(Error::Axis { axis, ndim: x.ndim() });
    }
    let len = x.dims()[axis];
    if w.len() != len {
        return Err(Error::shape(&[w.len()], &[len], "attention weights vs attended axis"));
    }
    let xd = x.data();
    let mut argmax = vec![usize::MAX; 2 * len];
    let mut descriptor = vec![f64::NEG_INFINITY; 2 * len];
    // strict comparison in increasing index order keeps the lowest index on ties
    for_each_slot(x.dims(), axis, |l, i| {
        if xd[i].re > descriptor[l] {
            descriptor[l] = xd[i].re;
            argmax[l] = i;
        }
        if xd[i].im > descriptor[len + l] {
            descriptor[len + l] = xd[i].im;
            argmax[len + l] = i;
        }
    });
    let pre_hidden = w.reduce.apply(&descriptor);
    let h: Vec<f64> = pre_hidden.iter().map(|v| v.max(0.0)).collect();
    let gates: Vec<f64> = w.expand.apply(&h).into_iter().map(sigmoid).collect();
    let mut out = x.clone();
    let od = out.data_mut();
    for_each_slot(x.dims(), axis, |l, i| {
        od[i] = c64::new(xd[i].re * gates[l], xd[i].im * gates[len + l]);
    });
    Ok((
        out,
        AttentionCache {
            input: x.clone(),
            axis,
            argmax,
            descriptor,
            pre_hidden,
            gates,
        },
    ))
}

pub fn se_attention_backward(
    cache: &AttentionCache,
    w: &AttentionWeights,
    g: &ComplexTensor,
) -> Result<(ComplexTensor, AttentionWeights)> {
    cache.input.check_same_dims(g, "attention upstream")?;
    let len = cache.gates.len() / 2;
    let a = &cache.gates;
    let (xd, gd) = (cache.input.data(), g.data());
    let mut gx = ComplexTensor::zeros(g.dims());
    let mut ga = vec![0.0; 2 * len];
    {
        let gxd = gx.data_mut();
        for_each_slot(g.dims(), cache.axis, |l, i| {
            gxd[i] = c64::new(gd[i].re * a[l], gd[i].im * a[len + l]);
            ga[l] += gd[i].re * xd[i].re;
            ga[len + l] += gd[i].im * xd[i].im;
        });
    }
    let mut grads = w.zeros_like();
    let gz2: Vec<f64> = ga.iter().zip(a).map(|(g, a)| g * a * (1.0 - a)).collect();
    let h: Vec<f64> = cache.pre_hidden.iter().map(|v| v.max(0.0)).collect();
    let gh = w.expand.backward(&h, &gz2, &mut grads.expand);
    let gz1: Vec<f64> = gh
        .iter()
        .zip(&cache.pre_hidden)
        .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
        .collect();
    let gs = w.reduce.backward(&cache.descriptor, &gz1, &mut grads.reduce);
    let gxd = gx.data_mut();
    for l in 0..len {
        gxd[cache.argmax[l]].re += gs[l];
        gxd[cache.argmax[len + l]].im += gs[len + l];
    }
    Ok((gx, grads))
}
