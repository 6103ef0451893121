use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    join, maxpool3d, maxpool3d_backward, modrelu, modrelu_backward, se_attention, se_attention_backward, upsample3d,
    upsample3d_backward, AttentionCache, AttentionWeights, Conv2dt, Conv2dtCache, ConvWeights, ModReluCache, ParamKind,
    Params, PoolCache, RealVector, UpsampleCache,
};
use crate::tensor::{ComplexTensor, Rng};

/// Attention runs over the time axis of `(1, channel, time, x, y)` maps.
const TIME_AXIS: usize = 2;
const OUTPUT_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub filters: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub attention: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            filters: 4,
            spatial_kernel: 3,
            temporal_kernel: 3,
            attention: true,
        }
    }
}

/// Convolution followed by ModReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2dt,
    pub act: RealVector,
}

pub struct BlockCache {
    conv: Conv2dtCache,
    act: ModReluCache,
}

impl ConvBlock {
    fn random(out: usize, inp: usize, cfg: &UNetConfig, rng: &mut Rng) -> Self {
        ConvBlock {
            conv: Conv2dt::random(out, inp, cfg.spatial_kernel, cfg.temporal_kernel, true, 1.0, rng),
            act: RealVector::zeros(out),
        }
    }

    fn zeros(out: usize, inp: usize, cfg: &UNetConfig) -> Self {
        ConvBlock {
            conv: Conv2dt::zeros(out, inp, cfg.spatial_kernel, cfg.temporal_kernel, true),
            act: RealVector::zeros(out),
        }
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<(ComplexTensor, BlockCache)> {
        let (h, conv) = self.conv.forward(x)?;
        let (y, act) = modrelu(&h, &self.act, 1)?;
        Ok((y, BlockCache { conv, act }))
    }

    pub fn backward(&self, cache: &BlockCache, g: &ComplexTensor) -> Result<(ComplexTensor, ConvBlock)> {
        let (gh, act) = modrelu_backward(&cache.act, &self.act, g)?;
        let (gx, conv) = self.conv.backward(&cache.conv, &gh)?;
        Ok((gx, ConvBlock { conv, act }))
    }
}

impl Params for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.act.visit(&join(prefix, "act"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.act.visit_mut(&join(prefix, "act"), f);
    }
}

fn run_blocks(blocks: &[ConvBlock], x: &ComplexTensor) -> Result<(ComplexTensor, Vec<BlockCache>)> {
    let mut h = x.clone();
    let mut caches = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (y, c) = b.forward(&h)?;
        h = y;
        caches.push(c);
    }
    Ok((h, caches))
}

fn back_blocks(blocks: &[ConvBlock], caches: &[BlockCache], g: &ComplexTensor) -> Result<(ComplexTensor, Vec<ConvBlock>)> {
    let mut g = g.clone();
    let mut grads = Vec::with_capacity(blocks.len());
    for (b, c) in blocks.iter().zip(caches).rev() {
        let (gx, gb) = b.backward(c, &g)?;
        g = gx;
        grads.push(gb);
    }
    grads.reverse();
    Ok((g, grads))
}

/// Two-stage complex 2D+t UNet with a residual connection from input to
/// output. The encoder stage runs at full resolution, the second stage on
/// 2x2x2-pooled maps with twice the filters, and each of the two
/// decoder-side stages ends with time attention.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams {
    pub encoder: Vec<ConvBlock>,
    pub bottom: Vec<ConvBlock>,
    pub bottom_attention: Option<AttentionWeights>,
    pub up: ConvWeights,
    pub decoder: Vec<ConvBlock>,
    pub decoder_attention: Option<AttentionWeights>,
    pub output: Conv2dt,
}

impl UNetParams {
    pub fn random(cfg: &UNetConfig, frames: usize, rng: &mut Rng) -> Self {
        let f = cfg.filters;
        let encoder = vec![ConvBlock::random(f, 1, cfg, rng), ConvBlock::random(f, f, cfg, rng)];
        let bottom = vec![ConvBlock::random(2 * f, f, cfg, rng), ConvBlock::random(2 * f, 2 * f, cfg, rng)];
        let bottom_attention = cfg.attention.then(|| AttentionWeights::random(frames.div_ceil(2), rng));
        let up = ConvWeights::random(f, 2 * f, [1, 1, 1], false, 1.0, rng);
        let decoder = vec![ConvBlock::random(f, f, cfg, rng), ConvBlock::random(f, f, cfg, rng)];
        let decoder_attention = cfg.attention.then(|| AttentionWeights::random(frames, rng));
        UNetParams {
            encoder,
            bottom,
            bottom_attention,
            up,
            decoder,
            decoder_attention,
            output: Conv2dt::random(1, f, cfg.spatial_kernel, cfg.temporal_kernel, true, OUTPUT_GAIN, rng),
        }
    }

    pub fn zeros(cfg: &UNetConfig, frames: usize) -> Self {
        let f = cfg.filters;
        UNetParams {
            encoder: vec![ConvBlock::zeros(f, 1, cfg), ConvBlock::zeros(f, f, cfg)],
            bottom: vec![ConvBlock::zeros(2 * f, f, cfg), ConvBlock::zeros(2 * f, 2 * f, cfg)],
            bottom_attention: cfg.attention.then(|| AttentionWeights::zeros(frames.div_ceil(2))),
            up: ConvWeights::zeros(f, 2 * f, [1, 1, 1], false),
            decoder: vec![ConvBlock::zeros(f, f, cfg), ConvBlock::zeros(f, f, cfg)],
            decoder_attention: cfg.attention.then(|| AttentionWeights::zeros(frames)),
            output: Conv2dt::zeros(1, f, cfg.spatial_kernel, cfg.temporal_kernel, true),
        }
    }

    pub fn has_attention(&self) -> bool {
        self.decoder_attention.is_some()
    }
}

impl Params for UNetParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.bottom.visit(&join(prefix, "bottom"), f);
        self.bottom_attention.visit(&join(prefix, "bottom_attention"), f);
        self.up.visit(&join(prefix, "up"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        self.decoder_attention.visit(&join(prefix, "decoder_attention"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.bottom.visit_mut(&join(prefix, "bottom"), f);
        self.bottom_attention.visit_mut(&join(prefix, "bottom_attention"), f);
        self.up.visit_mut(&join(prefix, "up"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        self.decoder_attention.visit_mut(&join(prefix, "decoder_attention"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

pub struct UNetCache {
    dims: Vec<usize>,
    encoder: Vec<BlockCache>,
    pool: PoolCache,
    bottom: Vec<BlockCache>,
    bottom_attention: Option<AttentionCache>,
    up: UpsampleCache,
    decoder: Vec<BlockCache>,
    decoder_attention: Option<AttentionCache>,
    output: Conv2dtCache,
}

fn attend(x: ComplexTensor, w: Option<&AttentionWeights>) -> Result<(ComplexTensor, Option<AttentionCache>)> {
    match w {
        Some(w) => se_attention(&x, w, TIME_AXIS).map(|(y, c)| (y, Some(c))),
        None => Ok((x, None)),
    }
}

fn attend_backward(
    cache: Option<&AttentionCache>,
    w: Option<&AttentionWeights>,
    g: ComplexTensor,
) -> Result<(ComplexTensor, Option<AttentionWeights>)> {
    match (cache, w) {
        (Some(c), Some(w)) => se_attention_backward(c, w, &g).map(|(gx, gw)| (gx, Some(gw))),
        _ => Ok((g, None)),
    }
}

/// `x + UNet(x)` for an image `(T, X, Y)`.
pub fn unet_forward(x: &ComplexTensor, params: &UNetParams) -> Result<(ComplexTensor, UNetCache)> {
    let [t, nx, ny] = match *x.dims() {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::shape(x.dims(), &[0; 3], "image must be (T, X, Y)")),
    };
    let h = x.clone().reshape(&[1, 1, t, nx, ny])?;
    let (e1, encoder) = run_blocks(&params.encoder, &h)?;
    let (pooled, pool) = maxpool3d(&e1)?;
    let (b, bottom) = run_blocks(&params.bottom, &pooled)?;
    let (b, bottom_attention) = attend(b, params.bottom_attention.as_ref())?;
    let (u, up) = upsample3d(&b, &params.up, [t, nx, ny])?;
    let u = u.add(&e1)?;
    let (d, decoder) = run_blocks(&params.decoder, &u)?;
    let (d, decoder_attention) = attend(d, params.decoder_attention.as_ref())?;
    let (o, output) = params.output.forward(&d)?;
    let out = x.add(&o.reshape(&[t, nx, ny])?)?;
    Ok((
        out,
        UNetCache {
            dims: x.dims().to_vec(),
            encoder,
            pool,
            bottom,
            bottom_attention,
            up,
            decoder,
            decoder_attention,
            output,
        },
    ))
}

pub fn unet_backward(cache: &UNetCache, params: &UNetParams, g: &ComplexTensor) -> Result<(ComplexTensor, UNetParams)> {
    let [t, nx, ny] = [cache.dims[0], cache.dims[1], cache.dims[2]];
    let go = g.clone().reshape(&[1, 1, t, nx, ny])?;
    let (gd, output) = params.output.backward(&cache.output, &go)?;
    let (gd, decoder_attention) = attend_backward(cache.decoder_attention.as_ref(), params.decoder_attention.as_ref(), gd)?;
    let (gu, decoder) = back_blocks(&params.decoder, &cache.decoder, &gd)?;
    let (gb, up) = upsample3d_backward(&cache.up, &params.up, &gu)?;
    let (gb, bottom_attention) = attend_backward(cache.bottom_attention.as_ref(), params.bottom_attention.as_ref(), gb)?;
    let (gp, bottom) = back_blocks(&params.bottom, &cache.bottom, &gb)?;
    // the skip connection adds the upstream of u to e1
    let ge1 = maxpool3d_backward(&cache.pool, &gp)?.add(&gu)?;
    let (gh, encoder) = back_blocks(&params.encoder, &cache.encoder, &ge1)?;
    let gx = g.add(&gh.reshape(&[t, nx, ny])?)?;
    Ok((
        gx,
        UNetParams {
            encoder,
            bottom,
            bottom_attention,
            up,
            decoder,
            decoder_attention,
            output,
        },
    ))
}
