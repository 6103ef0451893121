use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    conv3d, conv3d_backward, join, modrelu, modrelu_backward, se_attention, se_attention_backward, AttentionCache,
    AttentionWeights, ConvWeights, ModReluCache, ParamKind, Params, RealVector,
};
use crate::tensor::{ComplexTensor, Rng};

/// Attention runs over the coil axis of `(time, channel, coil, kx, ky)` maps.
const COIL_AXIS: usize = 2;
const KERNEL: [usize; 3] = [3, 3, 3];
const OUTPUT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KNetConfig {
    pub filters: usize,
    pub attention: bool,
    /// Adds the input k-space to the CNN output.
    pub residual: bool,
}

impl Default for KNetConfig {
    fn default() -> Self {
        KNetConfig {
            filters: 4,
            attention: true,
            residual: true,
        }
    }
}

/// Three bias-free 3x3x3 convolutions over (coil, kx, ky) with ModReLU and
/// coil attention after the first two.
#[derive(Clone, Debug, PartialEq)]
pub struct KNetParams {
    pub residual: bool,
    pub convs: Vec<ConvWeights>,
    pub acts: Vec<RealVector>,
    pub attention: Option<Vec<AttentionWeights>>,
}

impl KNetParams {
    pub fn random(cfg: &KNetConfig, coils: usize, rng: &mut Rng) -> Self {
        let f = cfg.filters;
        KNetParams {
            residual: cfg.residual,
            convs: vec![
                ConvWeights::random(f, 1, KERNEL, false, 1.0, rng),
                ConvWeights::random(f, f, KERNEL, false, 1.0, rng),
                ConvWeights::random(1, f, KERNEL, false, OUTPUT_GAIN, rng),
            ],
            acts: vec![RealVector::zeros(f), RealVector::zeros(f)],
            attention: cfg
                .attention
                .then(|| vec![AttentionWeights::random(coils, rng), AttentionWeights::random(coils, rng)]),
        }
    }

    pub fn zeros(cfg: &KNetConfig, coils: usize) -> Self {
        let f = cfg.filters;
        KNetParams {
            residual: cfg.residual,
            convs: vec![
                ConvWeights::zeros(f, 1, KERNEL, false),
                ConvWeights::zeros(f, f, KERNEL, false),
                ConvWeights::zeros(1, f, KERNEL, false),
            ],
            acts: vec![RealVector::zeros(f), RealVector::zeros(f)],
            attention: cfg.attention.then(|| vec![AttentionWeights::zeros(coils), AttentionWeights::zeros(coils)]),
        }
    }
}

impl Params for KNetParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.convs.visit(&join(prefix, "conv"), f);
        self.acts.visit(&join(prefix, "act"), f);
        self.attention.visit(&join(prefix, "attention"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.convs.visit_mut(&join(prefix, "conv"), f);
        self.acts.visit_mut(&join(prefix, "act"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
    }
}

pub struct KNetCache {
    dims: Vec<usize>,
    conv_inputs: Vec<ComplexTensor>,
    acts: Vec<ModReluCache>,
    attention: Vec<AttentionCache>,
}

/// k-space CNN on `(T, C, X, Y)` data.
pub fn knet_forward(y: &ComplexTensor, params: &KNetParams) -> Result<(ComplexTensor, KNetCache)> {
    let [t, c, nx, ny] = match *y.dims() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape(y.dims(), &[0; 4], "k-space must be (T, C, X, Y)")),
    };
    let mut h = y.clone().reshape(&[t, 1, c, nx, ny])?;
    let mut conv_inputs = Vec::with_capacity(3);
    let mut acts = Vec::with_capacity(2);
    let mut attention = Vec::with_capacity(2);
    for (i, w) in params.convs.iter().enumerate() {
        conv_inputs.push(h.clone());
        h = conv3d(&h, w)?;
        if i < 2 {
            let (a, ac) = modrelu(&h, &params.acts[i], 1)?;
            acts.push(ac);
            h = match &params.attention {
                Some(w) => {
                    let (s, sc) = se_attention(&a, &w[i], COIL_AXIS)?;
                    attention.push(sc);
                    s
                }
                None => a,
            };
        }
    }
    let mut out = h.reshape(&[t, c, nx, ny])?;
    if params.residual {
        out.add_assign(y)?;
    }
    Ok((
        out,
        KNetCache {
            dims: y.dims().to_vec(),
            conv_inputs,
            acts,
            attention,
        },
    ))
}

pub fn knet_backward(cache: &KNetCache, params: &KNetParams, g: &ComplexTensor) -> Result<(ComplexTensor, KNetParams)> {
    let [t, c, nx, ny] = [cache.dims[0], cache.dims[1], cache.dims[2], cache.dims[3]];
    let mut gh = g.clone().reshape(&[t, 1, c, nx, ny])?;
    let mut convs = Vec::with_capacity(3);
    let mut acts = Vec::with_capacity(2);
    let mut attention = Vec::with_capacity(2);
    for i in (0..params.convs.len()).rev() {
        if i < 2 {
            if let Some(w) = &params.attention {
                let (ga, gatt) = se_attention_backward(&cache.attention[i], &w[i], &gh)?;
                gh = ga;
                attention.push(gatt);
            }
            let (gc, gact) = modrelu_backward(&cache.acts[i], &params.acts[i], &gh)?;
            gh = gc;
            acts.push(gact);
        }
        let (gx, gw) = conv3d_backward(&cache.conv_inputs[i], &params.convs[i], &gh)?;
        gh = gx;
        convs.push(gw);
    }
    convs.reverse();
    acts.reverse();
    attention.reverse();
    let mut gy = gh.reshape(&[t, c, nx, ny])?;
    if params.residual {
        gy.add_assign(g)?;
    }
    Ok((
        gy,
        KNetParams {
            residual: params.residual,
            convs,
            acts,
            attention: params.attention.as_ref().map(|_| attention),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gradcheck::{check_params, check_tensor};

    #[test]
    fn zero_weights_are_identity() {
        let mut rng = Rng::new(1);
        let y = rng.complex_tensor(&[2, 3, 4, 4]);
        let (out, _) = knet_forward(&y, &KNetParams::zeros(&KNetConfig::default(), 3)).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn without_residual_zero_weights_give_zero() {
        let mut rng = Rng::new(2);
        let y = rng.complex_tensor(&[2, 2, 4, 4]);
        let cfg = KNetConfig { residual: false, ..KNetConfig::default() };
        let (out, _) = knet_forward(&y, &KNetParams::zeros(&cfg, 2)).unwrap();
        assert_eq!(out.norm(), 0.0);
    }

    #[test]
    fn attention_can_be_disabled() {
        let mut rng = Rng::new(5);
        let cfg = KNetConfig { attention: false, ..KNetConfig::default() };
        let p = KNetParams::random(&cfg, 2, &mut rng);
        let y = rng.complex_tensor(&[2, 2, 4, 4]);
        let c = rng.complex_tensor(y.dims());
        let (_, cache) = knet_forward(&y, &p).unwrap();
        let (_, gp) = knet_backward(&cache, &p, &c).unwrap();
        assert!(gp.attention.is_none());
        assert!(p.count_params() < KNetParams::random(&KNetConfig::default(), 2, &mut rng).count_params());
    }

    #[test]
    fn dims_preserved() {
        let mut rng = Rng::new(3);
        for c in [2, 4] {
            let p = KNetParams::random(&KNetConfig::default(), c, &mut rng);
            let y = rng.complex_tensor(&[3, c, 8, 6]);
            assert_eq!(knet_forward(&y, &p).unwrap().0.dims(), &[3, c, 8, 6]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let mut p = KNetParams::random(&KNetConfig::default(), 2, &mut rng);
        p.convs[2] = ConvWeights::random(1, 4, KERNEL, false, 1.0, &mut rng);
        p.acts[0] = RealVector::from_values(&[0.1, -0.2, 0.05, 0.0]);
        let y = rng.complex_tensor(&[2, 2, 4, 4]);
        let c = rng.complex_tensor(y.dims());
        let (_, cache) = knet_forward(&y, &p).unwrap();
        let (gy, gp) = knet_backward(&cache, &p, &c).unwrap();
        let loss = |y: &ComplexTensor, p: &KNetParams| c.real_inner(&knet_forward(y, p).unwrap().0).unwrap();
        let err = check_tensor(&y, &gy, ParamKind::Complex, 4, &mut rng, |y| loss(y, &p));
        assert!(err < 1e-5, "input {err}");
        for (name, err) in check_params(&p, &gp, 3, &mut rng, |p| loss(&y, p)) {
            assert!(err < 1e-5, "{name} {err}");
        }
    }
}
