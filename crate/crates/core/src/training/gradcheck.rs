//! Central finite-difference checks of hand-written backward passes.
//!
//! Every check perturbs along random directions and compares
//! `(L(x + h d) - L(x - h d)) / 2h` with `Re<grad, d>`.

use nalgebra::DMatrix;

use crate::consistency::{
    image_dc, image_dc_backward, isl, isl_backward, kspace_dc, kspace_dc_backward, logit, ImageDcParams, IslParams,
    KDcParams,
};
use crate::error::{Error, Result};
use crate::mri::{make_dataset, Dims};
use crate::network::{backward, forward, init_state, Network, NetworkConfig, OpTrace, Problem};
use crate::nn::{
    conv3d, conv3d_backward, join, maxpool3d, maxpool3d_backward, modrelu, modrelu_backward, se_attention,
    se_attention_backward, upsample3d, upsample3d_backward, AttentionWeights, Conv2dt, ConvWeights, ParamKind, Params,
    RealVector,
};
use crate::subnet::{
    knet_backward, knet_forward, lowrank_backward, lowrank_forward, svt, svt_backward, unet_backward, unet_forward,
    KNetConfig, KNetParams, LowRankParams, PatchSpec, SvtMode, UNetConfig, UNetParams, SURROGATE_WIDTH,
};
use crate::tensor::{c64, ComplexTensor, Rng};
use crate::training::loss::{loss, loss_with_grad, LossNorm};

pub const FD_STEP: f64 = 1e-6;

/// `|fd - analytic| / max(|fd|, |analytic|)`, with a floor of 1e-12 on the
/// denominator so that two vanishing derivatives compare equal.
pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-12)
}

fn direction(rng: &mut Rng, like: &ComplexTensor, kind: ParamKind) -> ComplexTensor {
    match kind {
        ParamKind::Complex => rng.complex_tensor(like.dims()),
        ParamKind::Real => rng.real_tensor(like.dims()),
    }
}

/// Second differences above this (relative to the loss) mean the probe
/// segment crosses a jump or kink of the forward map, e.g. an argmax switch
/// in magnitude pooling. Round-off sits near 1e-14 and smooth curvature near
/// `h^2 f''`, both far below.
const SEGMENT_JUMP: f64 = 1e-10;
const REDRAWS: usize = 10;

/// Worst relative error over `probes` random directions for a tensor input.
/// A direction whose segment crosses a non-smooth point of `loss` is redrawn
/// (at most `REDRAWS` times), since the central difference is meaningless
/// there; the check on the gradient itself is unaffected.
pub fn check_tensor(
    x: &ComplexTensor,
    grad: &ComplexTensor,
    kind: ParamKind,
    probes: usize,
    rng: &mut Rng,
    loss: impl Fn(&ComplexTensor) -> f64,
) -> f64 {
    let at = |d: &ComplexTensor, k: f64| {
        let mut p = x.clone();
        p.axpy(k * FD_STEP, d).expect("same dims");
        loss(&p)
    };
    let center = loss(x);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut err = f64::NAN;
        for _ in 0..=REDRAWS {
            let d = direction(rng, x, kind);
            let (plus, minus) = (at(&d, 1.0), at(&d, -1.0));
            let fd = (plus - minus) / (2.0 * FD_STEP);
            err = relative_error(fd, grad.real_inner(&d).expect("same dims"));
            if (plus - 2.0 * center + minus).abs() <= SEGMENT_JUMP * center.abs().max(1.0) {
                break;
            }
        }
        if err.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(err);
    }
    worst
}

/// Worst relative error per named parameter tensor. `grads` must be the
/// gradient of `loss` at `params`.
pub fn check_params<P: Params + Clone>(
    params: &P,
    grads: &P,
    probes: usize,
    rng: &mut Rng,
    loss: impl Fn(&P) -> f64,
) -> Vec<(String, f64)> {
    let values = params.named_tensors();
    let grads = grads.named_tensors();
    values
        .iter()
        .zip(&grads)
        .map(|((name, value, kind), (_, grad, _))| {
            let err = check_tensor(value, grad, *kind, probes, rng, |v| {
                let mut p = params.clone();
                p.visit_mut("", &mut |n, t, _| {
                    if n == name {
                        *t = v.clone();
                    }
                });
                loss(&p)
            });
            (name.clone(), err)
        })
        .collect()
}

/// Backward passes the harness can check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    Conv,
    ModRelu,
    MaxPool,
    Upsample,
    Attention,
    Svt,
    UNet,
    LowRank,
    KNet,
    ImageDc,
    KspaceDc,
    Isl,
    Loss,
    Network,
}

impl GradTarget {
    pub const ALL: [GradTarget; 14] = [
        GradTarget::Conv,
        GradTarget::ModRelu,
        GradTarget::MaxPool,
        GradTarget::Upsample,
        GradTarget::Attention,
        GradTarget::Svt,
        GradTarget::UNet,
        GradTarget::LowRank,
        GradTarget::KNet,
        GradTarget::ImageDc,
        GradTarget::KspaceDc,
        GradTarget::Isl,
        GradTarget::Loss,
        GradTarget::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::Conv => "conv",
            GradTarget::ModRelu => "modrelu",
            GradTarget::MaxPool => "maxpool",
            GradTarget::Upsample => "upsample",
            GradTarget::Attention => "attention",
            GradTarget::Svt => "svt",
            GradTarget::UNet => "unet",
            GradTarget::LowRank => "lowrank",
            GradTarget::KNet => "knet",
            GradTarget::ImageDc => "image-dc",
            GradTarget::KspaceDc => "kspace-dc",
            GradTarget::Isl => "isl",
            GradTarget::Loss => "loss",
            GradTarget::Network => "network",
        }
    }
}

impl std::str::FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown gradient check target {s:?}")))
    }
}

/// Worst relative error per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub entries: Vec<(String, f64)>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries.iter().all(|(_, e)| *e < tol)
    }
}

const PROBES: usize = 5;

fn prefixed(prefix: &str, entries: Vec<(String, f64)>) -> Vec<(String, f64)> {
    entries.into_iter().map(|(n, e)| (join(prefix, &n), e)).collect()
}

/// Checks one backward pass on random inputs of the given problem size.
/// Every loss is `Re<c, f(x)>` for a random cotangent `c`.
pub fn grad_check(target: GradTarget, dims: Dims, rng: &mut Rng) -> Result<GradReport> {
    let Dims { frames: t, nx, ny, coils } = dims;
    let feat = [t, 2, 2, nx, ny];
    let mut entries = Vec::new();
    match target {
        GradTarget::Conv => {
            let w = ConvWeights::random(3, 2, [3, 3, 3], true, 1.0, rng);
            let x = rng.complex_tensor(&feat);
            let c = rng.complex_tensor(&[t, 3, 2, nx, ny]);
            let (gx, gw) = conv3d_backward(&x, &w, &c)?;
            let f = |x: &ComplexTensor, w: &ConvWeights| c.real_inner(&conv3d(x, w).unwrap()).unwrap();
            entries.push(("input".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| f(x, &w))));
            entries.extend(check_params(&w, &gw, PROBES, rng, |w| f(&x, w)));
        }
        GradTarget::ModRelu => {
            let x = rng.complex_tensor(&feat);
            let b = RealVector::from_values(&[0.1, -0.3]);
            let c = rng.complex_tensor(&feat);
            let (_, cache) = modrelu(&x, &b, 1)?;
            let (gx, gb) = modrelu_backward(&cache, &b, &c)?;
            let f = |x: &ComplexTensor, b: &RealVector| c.real_inner(&modrelu(x, b, 1).unwrap().0).unwrap();
            entries.push(("input".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| f(x, &b))));
            entries.extend(prefixed("bias", check_params(&b, &gb, PROBES, rng, |b| f(&x, b))));
        }
        GradTarget::MaxPool => {
            let x = rng.complex_tensor(&feat);
            let (y, cache) = maxpool3d(&x)?;
            let c = rng.complex_tensor(y.dims());
            let gx = maxpool3d_backward(&cache, &c)?;
            let err = check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| {
                c.real_inner(&maxpool3d(x).unwrap().0).unwrap()
            });
            entries.push(("input".into(), err));
        }
        GradTarget::Upsample => {
            let w = ConvWeights::random(2, 3, [1, 1, 1], false, 1.0, rng);
            let target = [2, nx, ny];
            let x = rng.complex_tensor(&[t, 3, 1, nx.div_ceil(2), ny.div_ceil(2)]);
            let c = rng.complex_tensor(&[t, 2, 2, nx, ny]);
            let (_, cache) = upsample3d(&x, &w, target)?;
            let (gx, gw) = upsample3d_backward(&cache, &w, &c)?;
            let f = |x: &ComplexTensor, w: &ConvWeights| c.real_inner(&upsample3d(x, w, target).unwrap().0).unwrap();
            entries.push(("input".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| f(x, &w))));
            entries.extend(check_params(&w, &gw, PROBES, rng, |w| f(&x, w)));
        }
        GradTarget::Attention => {
            let w = AttentionWeights::random(coils, rng);
            let x = rng.complex_tensor(&[t, 2, coils, nx, ny]);
            let c = rng.complex_tensor(x.dims());
            let (_, cache) = se_attention(&x, &w, 2)?;
            let (gx, gw) = se_attention_backward(&cache, &w, &c)?;
            let f = |x: &ComplexTensor, w: &AttentionWeights| c.real_inner(&se_attention(x, w, 2).unwrap().0).unwrap();
            entries.push(("input".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| f(x, &w))));
            entries.extend(check_params(&w, &gw, PROBES, rng, |w| f(&x, w)));
        }
        GradTarget::Svt => {
            let rows = nx * ny / 4;
            let x = rng.complex_tensor(&[rows.max(2), t]);
            let x = DMatrix::from_row_slice(x.dims()[0], t, x.data());
            let c = rng.complex_tensor(&[x.nrows(), t]);
            let c = DMatrix::from_row_slice(x.nrows(), t, c.data());
            let loss = |y: &DMatrix<c64>| y.iter().zip(c.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            let tau = -1.0;
            let (_, cache) = svt(&x, tau, SvtMode::Hard)?;
            let (gx, _) = svt_backward(&cache, &c)?;
            let xt = ComplexTensor::from_vec(&[x.nrows(), t], x.transpose().iter().cloned().collect())?;
            let gt = ComplexTensor::from_vec(&[x.nrows(), t], gx.transpose().iter().cloned().collect())?;
            let err = check_tensor(&xt, &gt, ParamKind::Complex, PROBES, rng, |v| {
                let m = DMatrix::from_row_slice(x.nrows(), t, v.data());
                loss(&svt(&m, tau, SvtMode::Hard).unwrap().0)
            });
            entries.push(("input".into(), err));
            // threshold one surrogate width below the second singular value: inside
            // the smoothed step but clear of its kink at the threshold itself
            // The threshold probe uses the input as cotangent, so each
            // singular direction contributes its (positive) singular value.
            let s = cache.singular_values();
            let tau = logit(s[1] / s[0] - SURROGATE_WIDTH);
            let (_, cache) = svt(&x, tau, SvtMode::Surrogate)?;
            let (_, gtau) = svt_backward(&cache, &x)?;
            let err = check_tensor(&ComplexTensor::scalar(tau), &ComplexTensor::scalar(gtau), ParamKind::Real, 1, rng, |v| {
                let y = svt(&x, v.data()[0].re, SvtMode::Surrogate).unwrap().0;
                y.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
            });
            entries.push(("tau".into(), err));
        }
        GradTarget::UNet => {
            let cfg = UNetConfig::default();
            let mut p = UNetParams::random(&cfg, t, rng);
            p.output = Conv2dt::random(1, cfg.filters, cfg.spatial_kernel, cfg.temporal_kernel, true, 1.0, rng);
            let x = rng.complex_tensor(&dims.image());
            let c = rng.complex_tensor(x.dims());
            let (_, cache) = unet_forward(&x, &p)?;
            let (gx, gp) = unet_backward(&cache, &p, &c)?;
            let f = |x: &ComplexTensor, p: &UNetParams| c.real_inner(&unet_forward(x, p).unwrap().0).unwrap();
            entries.push(("input".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| f(x, &p))));
            entries.extend(check_params(&p, &gp, PROBES, rng, |p| f(&x, p)));
        }
        GradTarget::LowRank => {
            let spec = PatchSpec { nt: 1, nx: 2, ny: 2 };
            let x = rng.complex_tensor(&dims.image());
            let c = rng.complex_tensor(x.dims());
            let p = LowRankParams::with_tau(spec, -1.0);
            let (_, cache) = lowrank_forward(&x, &p, SvtMode::Hard)?;
            let (gx, _) = lowrank_backward(&cache, &p, &c)?;
            let f = |x: &ComplexTensor, p: &LowRankParams, mode| c.real_inner(&lowrank_forward(x, p, mode).unwrap().0).unwrap();
            entries.push(("input".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |x| f(x, &p, SvtMode::Hard))));
            let taus: Vec<f64> = cache
                .patches()
                .iter()
                .map(|s| {
                    let s = s.singular_values();
                    logit(s[1] / s[0] - SURROGATE_WIDTH)
                })
                .collect();
            let p = LowRankParams::with_tau_values(spec, &taus);
            let (_, cache) = lowrank_forward(&x, &p, SvtMode::Surrogate)?;
            let (_, gp) = lowrank_backward(&cache, &p, &x)?;
            entries.extend(check_params(&p, &gp, PROBES, rng, |p| {
                x.real_inner(&lowrank_forward(&x, p, SvtMode::Surrogate).unwrap().0).unwrap()
            }));
        }
        GradTarget::KNet => {
            let cfg = KNetConfig::default();
            let mut p = KNetParams::random(&cfg, coils, rng);
            p.convs[2] = ConvWeights::random(1, cfg.filters, [3, 3, 3], false, 1.0, rng);
            let y = rng.complex_tensor(&dims.kspace());
            let c = rng.complex_tensor(y.dims());
            let (_, cache) = knet_forward(&y, &p)?;
            let (gy, gp) = knet_backward(&cache, &p, &c)?;
            let f = |y: &ComplexTensor, p: &KNetParams| c.real_inner(&knet_forward(y, p).unwrap().0).unwrap();
            entries.push(("input".into(), check_tensor(&y, &gy, ParamKind::Complex, PROBES, rng, |y| f(y, &p))));
            entries.extend(check_params(&p, &gp, PROBES, rng, |p| f(&y, p)));
        }
        GradTarget::ImageDc | GradTarget::KspaceDc | GradTarget::Isl => {
            let s = make_dataset(1, dims, (2.0, 2.0), 2, rng.next_u64())?.remove(0);
            let op = s.operator()?;
            let y_u = &s.under_kspace;
            let x = rng.complex_tensor(&dims.image());
            let y = rng.complex_tensor(&dims.kspace());
            match target {
                GradTarget::ImageDc => {
                    let q = rng.complex_tensor(x.dims());
                    let c = rng.complex_tensor(x.dims());
                    let mut p = ImageDcParams::default();
                    p.eta.set(0.7);
                    p.alpha.set(0.3);
                    let (_, cache) = image_dc(&x, &q, y_u, &op, &p)?;
                    let (gp, gq, gw) = image_dc_backward(&cache, &op, &p, &c)?;
                    let f = |a: &ComplexTensor, b: &ComplexTensor, w: &ImageDcParams| {
                        c.real_inner(&image_dc(a, b, y_u, &op, w).unwrap().0).unwrap()
                    };
                    entries.push(("p".into(), check_tensor(&x, &gp, ParamKind::Complex, PROBES, rng, |a| f(a, &q, &p))));
                    entries.push(("q".into(), check_tensor(&q, &gq, ParamKind::Complex, PROBES, rng, |b| f(&x, b, &p))));
                    entries.extend(check_params(&p, &gw, PROBES, rng, |w| f(&x, &q, w)));
                }
                GradTarget::KspaceDc => {
                    let c = rng.complex_tensor(y.dims());
                    let p = KDcParams::default();
                    let (gr, gw) = kspace_dc_backward(&y, y_u, op.mask(), &p, &c)?;
                    let f = |r: &ComplexTensor, w: &KDcParams| c.real_inner(&kspace_dc(r, y_u, op.mask(), w).unwrap()).unwrap();
                    entries.push(("input".into(), check_tensor(&y, &gr, ParamKind::Complex, PROBES, rng, |r| f(r, &p))));
                    entries.extend(check_params(&p, &gw, PROBES, rng, |w| f(&y, w)));
                }
                _ => {
                    let cx = rng.complex_tensor(x.dims());
                    let cy = rng.complex_tensor(y.dims());
                    let mut p = IslParams::default();
                    p.a.set(0.4);
                    p.b.set(-0.6);
                    let (_, _, cache) = isl(&x, &y, &op, &p)?;
                    let (gx, gy, gw) = isl_backward(&cache, &op, &p, &cx, &cy)?;
                    let f = |x: &ComplexTensor, y: &ComplexTensor, w: &IslParams| {
                        let (a, b, _) = isl(x, y, &op, w).unwrap();
                        cx.real_inner(&a).unwrap() + cy.real_inner(&b).unwrap()
                    };
                    entries.push(("x".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |v| f(v, &y, &p))));
                    entries.push(("y".into(), check_tensor(&y, &gy, ParamKind::Complex, PROBES, rng, |v| f(&x, v, &p))));
                    entries.extend(check_params(&p, &gw, PROBES, rng, |w| f(&x, &y, w)));
                }
            }
        }
        GradTarget::Loss => {
            let (x, rx) = (rng.complex_tensor(&dims.image()), rng.complex_tensor(&dims.image()));
            let (y, ry) = (rng.complex_tensor(&dims.kspace()), rng.complex_tensor(&dims.kspace()));
            let (_, gx, gy) = loss_with_grad(&x, &y, &rx, &ry, LossNorm::PerTerm)?;
            let f = |x: &ComplexTensor, y: &ComplexTensor| loss(x, y, &rx, &ry, LossNorm::PerTerm).unwrap().total;
            entries.push(("image".into(), check_tensor(&x, &gx, ParamKind::Complex, PROBES, rng, |v| f(v, &y))));
            entries.push(("kspace".into(), check_tensor(&y, &gy, ParamKind::Complex, PROBES, rng, |v| f(&x, v))));
        }
        GradTarget::Network => entries = network_check(dims, rng)?,
    }
    Ok(GradReport { entries })
}

/// One-iteration network under a random linear probe. Weights are checked with
/// hard thresholding, thresholds with the smoothed step.
fn network_check(dims: Dims, rng: &mut Rng) -> Result<Vec<(String, f64)>> {
    let cfg = NetworkConfig {
        iterations: 1,
        patches: PatchSpec { nt: 1, nx: 2, ny: 2 },
        ..NetworkConfig::default()
    };
    let mut net = Network::init(cfg, dims, rng)?;
    for it in &mut net.iterations {
        // nonzero branch outputs and gates away from their saturation points
        if let Some(u) = &mut it.unet {
            u.output = Conv2dt::random(1, net.config.filters, net.config.spatial_kernel, net.config.temporal_kernel, true, 1.0, rng);
        }
        if let Some(k) = &mut it.knet {
            k.convs[2] = ConvWeights::random(1, net.config.kspace_filters, [3, 3, 3], false, 1.0, rng);
        }
        if let Some(d) = &mut it.image_dc {
            d.alpha.set(0.3);
        }
        // every squeeze-excitation hidden unit active and clear of its kink
        let blocks = it.unet.iter_mut().flat_map(|u| u.bottom_attention.iter_mut().chain(u.decoder_attention.iter_mut()));
        for a in blocks.chain(it.knet.iter_mut().flat_map(|k| k.attention.iter_mut().flatten())) {
            a.reduce.bias = ComplexTensor::filled(a.reduce.bias.dims(), c64::new(0.5, 0.0));
        }
        if let Some(i) = &mut it.isl {
            i.a.set(0.4);
            i.b.set(-0.6);
        }
    }
    let s = make_dataset(1, dims, (2.0, 2.0), 2, rng.next_u64())?.remove(0);
    let op = s.operator()?;
    let problem = Problem::new(&op, &s.under_kspace);
    let state = init_state(&s)?;
    let cx = rng.complex_tensor(&dims.image());
    let cy = rng.complex_tensor(&dims.kspace());
    let eval = |net: &Network, mode: SvtMode| {
        let (out, _) = forward(net, &state, &problem, mode, &mut OpTrace::default()).unwrap();
        cx.real_inner(&out.x).unwrap() + cy.real_inner(&out.y).unwrap()
    };
    let grads = |net: &Network, mode: SvtMode| -> Result<Network> {
        let (_, cache) = forward(net, &state, &problem, mode, &mut OpTrace::default())?;
        backward(net, &cache, &problem, &cx, &cy)
    };
    let hard = grads(&net, SvtMode::Hard)?;
    let mut entries: Vec<(String, f64)> = check_params(&net, &hard, PROBES, rng, |n| eval(n, SvtMode::Hard))
        .into_iter()
        .filter(|(n, _)| !n.ends_with("lowrank.tau"))
        .collect();

    // thresholds one surrogate width below the second singular value of each
    // patch, where the surrogate responds to tau
    let (_, cache) = forward(&net, &state, &problem, SvtMode::Hard, &mut OpTrace::default())?;
    let taus: Vec<Vec<f64>> = cache.lowrank_spectra().iter().map(|sp| sp.iter().map(|s| logit(s[1] / s[0] - SURROGATE_WIDTH)).collect()).collect();
    for (it, taus) in net.iterations.iter_mut().zip(&taus) {
        if let Some(l) = &mut it.lowrank {
            *l = LowRankParams::with_tau_values(l.spec, taus);
        }
    }
    let smooth = grads(&net, SvtMode::Surrogate)?;
    entries.extend(
        check_params(&net, &smooth, PROBES, rng, |n| eval(n, SvtMode::Surrogate))
            .into_iter()
            .filter(|(n, _)| n.ends_with("lowrank.tau")),
    );
    Ok(entries)
}
