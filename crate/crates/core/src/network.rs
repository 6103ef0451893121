//! The unrolled reconstruction network: per iteration a k-space branch, an
//! image branch and an information sharing layer, each of which can be
//! switched off to build the ablation variants.

use serde::{Deserialize, Serialize};

use crate::consistency::{
    image_dc, image_dc_backward, isl, isl_backward, kspace_dc, kspace_dc_backward, ImageDcCache, ImageDcParams,
    IslCache, IslParams, KDcParams,
};
use crate::error::{Error, Result};
use crate::mri::{CineSample, Dims, EncodingOperator};
use crate::nn::{join, ParamKind, Params};
use crate::subnet::{
    knet_backward, knet_forward, lowrank_backward, lowrank_forward, unet_backward, unet_forward, KNetCache, KNetConfig,
    KNetParams, LowRankCache, LowRankParams, PatchSpec, SvtMode, UNetCache, UNetConfig, UNetParams,
};
use crate::tensor::{ComplexTensor, Rng};

/// Architecture and component switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub iterations: usize,
    pub image_net: bool,
    pub lowrank: bool,
    pub kspace_net: bool,
    pub attention: bool,
    pub isl: bool,
    pub filters: usize,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub kspace_filters: usize,
    pub kspace_residual: bool,
    pub patches: PatchSpec,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            iterations: 2,
            image_net: true,
            lowrank: true,
            kspace_net: true,
            attention: true,
            isl: true,
            filters: 4,
            spatial_kernel: 3,
            temporal_kernel: 3,
            kspace_filters: 4,
            kspace_residual: true,
            patches: PatchSpec::default(),
        }
    }
}

/// Named component sets of the ablation study.
pub const VARIANTS: [&str; 6] = ["A-INet", "A-KNet", "A-LINet", "A-IKNet", "LIKNet", "A-LIKNet"];

impl NetworkConfig {
    /// The default configuration with the components of a named variant.
    pub fn variant(name: &str) -> Result<Self> {
        let (lowrank, image_net, kspace_net, attention) = match name {
            "A-INet" => (false, true, false, true),
            "A-KNet" => (false, false, true, true),
            "A-LINet" => (true, true, false, true),
            "A-IKNet" => (false, true, true, true),
            "LIKNet" => (true, true, true, false),
            "A-LIKNet" => (true, true, true, true),
            _ => {
                return Err(Error::config(format!(
                    "unknown variant {name:?}, expected one of {VARIANTS:?}"
                )))
            }
        };
        Ok(NetworkConfig {
            image_net,
            lowrank,
            kspace_net,
            attention,
            isl: kspace_net && (image_net || lowrank),
            ..NetworkConfig::default()
        })
    }

    pub fn image_branch(&self) -> bool {
        self.image_net || self.lowrank
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if self.isl && !(self.image_branch() && self.kspace_net) {
            return Err(Error::config("the sharing layer needs both the image and the k-space branch"));
        }
        if !self.image_branch() && !self.kspace_net {
            return Err(Error::config("at least one branch must be enabled"));
        }
        for (name, k) in [("spatial_kernel", self.spatial_kernel), ("temporal_kernel", self.temporal_kernel)] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.image_net && self.filters == 0 || self.kspace_net && self.kspace_filters == 0 {
            return Err(Error::config("filter counts must be positive"));
        }
        if self.lowrank {
            self.patches.layout(dims.image())?;
        }
        Ok(())
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            filters: self.filters,
            spatial_kernel: self.spatial_kernel,
            temporal_kernel: self.temporal_kernel,
            attention: self.attention,
        }
    }

    pub fn knet(&self) -> KNetConfig {
        KNetConfig {
            filters: self.kspace_filters,
            attention: self.attention,
            residual: self.kspace_residual,
        }
    }
}

/// Weights of one unrolled iteration; disabled components are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationParams {
    pub unet: Option<UNetParams>,
    pub lowrank: Option<LowRankParams>,
    pub knet: Option<KNetParams>,
    pub image_dc: Option<ImageDcParams>,
    pub kspace_dc: Option<KDcParams>,
    pub isl: Option<IslParams>,
}

impl IterationParams {
    pub fn init(config: &NetworkConfig, dims: &Dims, rng: &mut Rng) -> Self {
        IterationParams {
            unet: config.image_net.then(|| UNetParams::random(&config.unet(), dims.frames, rng)),
            lowrank: config.lowrank.then(|| LowRankParams::new(config.patches)),
            knet: config.kspace_net.then(|| KNetParams::random(&config.knet(), dims.coils, rng)),
            image_dc: config.image_branch().then(ImageDcParams::default),
            kspace_dc: config.kspace_net.then(KDcParams::default),
            isl: config.isl.then(IslParams::default),
        }
    }
}

pub const COMPONENTS: [&str; 6] = ["unet", "lowrank", "knet", "image_dc", "kspace_dc", "isl"];

impl Params for IterationParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.unet.visit(&join(prefix, "unet"), f);
        self.lowrank.visit(&join(prefix, "lowrank"), f);
        self.knet.visit(&join(prefix, "knet"), f);
        self.image_dc.visit(&join(prefix, "image_dc"), f);
        self.kspace_dc.visit(&join(prefix, "kspace_dc"), f);
        self.isl.visit(&join(prefix, "isl"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.unet.visit_mut(&join(prefix, "unet"), f);
        self.lowrank.visit_mut(&join(prefix, "lowrank"), f);
        self.knet.visit_mut(&join(prefix, "knet"), f);
        self.image_dc.visit_mut(&join(prefix, "image_dc"), f);
        self.kspace_dc.visit_mut(&join(prefix, "kspace_dc"), f);
        self.isl.visit_mut(&join(prefix, "isl"), f);
    }
}

/// Configuration plus one weight set per iteration (weights are not shared).
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub dims: Dims,
    pub iterations: Vec<IterationParams>,
}

impl Network {
    pub fn init(config: NetworkConfig, dims: Dims, rng: &mut Rng) -> Result<Self> {
        config.validate(&dims)?;
        let iterations = (0..config.iterations)
            .map(|_| IterationParams::init(&config, &dims, rng))
            .collect();
        Ok(Network { config, dims, iterations })
    }

    /// Real degrees of freedom per component, summed over iterations.
    pub fn breakdown(&self) -> Vec<(&'static str, usize)> {
        COMPONENTS
            .iter()
            .map(|&name| {
                let mut n = 0;
                self.visit("", &mut |path, t, kind| {
                    if path.split('.').nth(1) == Some(name) {
                        n += t.len() * kind.dof();
                    }
                });
                (name, n)
            })
            .collect()
    }
}

impl Params for Network {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.iterations.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.iterations.visit_mut(prefix, f);
    }
}

/// Image and k-space estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub x: ComplexTensor,
    pub y: ComplexTensor,
}

/// Zero-filled image and the acquired k-space.
pub fn init_state(sample: &CineSample) -> Result<State> {
    Ok(State {
        x: sample.zero_filled()?,
        y: sample.under_kspace.clone(),
    })
}

/// Counts of executed operations, for checking which components ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTrace {
    pub unet_calls: usize,
    pub lowrank_calls: usize,
    pub kspace_convs: usize,
    pub attention_blocks: usize,
    pub image_dc_calls: usize,
    pub kspace_dc_calls: usize,
    pub isl_calls: usize,
}

struct IterationCache {
    knet: Option<KNetCache>,
    r: Option<ComplexTensor>,
    unet: Option<UNetCache>,
    lowrank: Option<LowRankCache>,
    image_dc: Option<ImageDcCache>,
    isl: Option<IslCache>,
}

pub struct ForwardCache {
    iterations: Vec<IterationCache>,
}

impl ForwardCache {
    /// Singular values of every low-rank patch, per iteration.
    pub fn lowrank_spectra(&self) -> Vec<Vec<Vec<f64>>> {
        self.iterations
            .iter()
            .map(|c| {
                c.lowrank
                    .as_ref()
                    .map(|l| l.patches().iter().map(|p| p.singular_values().to_vec()).collect())
                    .unwrap_or_default()
            })
            .collect()
    }
}

/// Everything a forward pass needs besides the weights.
pub struct Problem<'a> {
    pub op: &'a EncodingOperator,
    pub y_u: &'a ComplexTensor,
}

impl<'a> Problem<'a> {
    pub fn new(op: &'a EncodingOperator, y_u: &'a ComplexTensor) -> Self {
        Problem { op, y_u }
    }
}

/// Network outputs: the final image and k-space estimates. A network
/// without a k-space branch reports `FS x` as its k-space; one without an
/// image branch reports `(FS)^H y` as its image.
pub fn forward(
    net: &Network,
    state: &State,
    problem: &Problem,
    mode: SvtMode,
    trace: &mut OpTrace,
) -> Result<(State, ForwardCache)> {
    net.config.validate(&net.dims)?;
    if net.iterations.len() != net.config.iterations {
        return Err(Error::config(format!(
            "{} weight sets for {} iterations",
            net.iterations.len(),
            net.config.iterations
        )));
    }
    let (op, y_u) = (problem.op, problem.y_u);
    let mut x = state.x.clone();
    let mut y = state.y.clone();
    let mut caches = Vec::with_capacity(net.iterations.len());
    for it in &net.iterations {
        let mut c = IterationCache {
            knet: None,
            r: None,
            unet: None,
            lowrank: None,
            image_dc: None,
            isl: None,
        };
        if let (Some(kp), Some(dp)) = (&it.knet, &it.kspace_dc) {
            let (r, kc) = knet_forward(&y, kp)?;
            trace.kspace_convs += kp.convs.len();
            trace.attention_blocks += kp.attention.as_ref().map_or(0, |a| a.len());
            y = kspace_dc(&r, y_u, op.mask(), dp)?;
            trace.kspace_dc_calls += 1;
            c.knet = Some(kc);
            c.r = Some(r);
        }
        if let Some(dp) = &it.image_dc {
            let p = match &it.unet {
                Some(up) => {
                    let (p, uc) = unet_forward(&x, up)?;
                    trace.unet_calls += 1;
                    trace.attention_blocks += [&up.bottom_attention, &up.decoder_attention]
                        .iter()
                        .filter(|a| a.is_some())
                        .count();
                    c.unet = Some(uc);
                    Some(p)
                }
                None => None,
            };
            let q = match &it.lowrank {
                Some(lp) => {
                    let (q, lc) = lowrank_forward(&x, lp, mode)?;
                    trace.lowrank_calls += 1;
                    c.lowrank = Some(lc);
                    Some(q)
                }
                None => None,
            };
            let (p, q) = match (p, q) {
                (Some(p), Some(q)) => (p, q),
                (Some(p), None) => (p.clone(), p),
                (None, Some(q)) => (q.clone(), q),
                (None, None) => return Err(Error::config("image DC without an image subnetwork")),
            };
            let (xn, dc) = image_dc(&p, &q, y_u, op, dp)?;
            trace.image_dc_calls += 1;
            x = xn;
            c.image_dc = Some(dc);
        }
        if let Some(ip) = &it.isl {
            let (xn, yn, ic) = isl(&x, &y, op, ip)?;
            trace.isl_calls += 1;
            x = xn;
            y = yn;
            c.isl = Some(ic);
        }
        caches.push(c);
    }
    let out = readout(&net.config, &State { x, y }, op)?;
    Ok((out, ForwardCache { iterations: caches }))
}

fn readout(config: &NetworkConfig, s: &State, op: &EncodingOperator) -> Result<State> {
    Ok(match (config.image_branch(), config.kspace_net) {
        (true, false) => State {
            x: s.x.clone(),
            y: op.coil_fft(&s.x)?,
        },
        (false, true) => State {
            x: op.coil_ifft(&s.y)?,
            y: s.y.clone(),
        },
        _ => s.clone(),
    })
}

/// Parameter gradients given the cotangents of the output image and k-space.
pub fn backward(
    net: &Network,
    cache: &ForwardCache,
    problem: &Problem,
    gx_out: &ComplexTensor,
    gy_out: &ComplexTensor,
) -> Result<Network> {
    let (op, y_u) = (problem.op, problem.y_u);
    let mut gx = gx_out.clone();
    let mut gy = gy_out.clone();
    match (net.config.image_branch(), net.config.kspace_net) {
        (true, false) => gx.add_assign(&op.coil_ifft(gy_out)?)?,
        (false, true) => gy.add_assign(&op.coil_fft(gx_out)?)?,
        _ => {}
    }
    let mut grads: Vec<IterationParams> = Vec::with_capacity(net.iterations.len());
    for (it, c) in net.iterations.iter().zip(&cache.iterations).rev() {
        let mut g = IterationParams {
            unet: None,
            lowrank: None,
            knet: None,
            image_dc: None,
            kspace_dc: None,
            isl: None,
        };
        if let (Some(ip), Some(ic)) = (&it.isl, &c.isl) {
            let (ngx, ngy, gi) = isl_backward(ic, op, ip, &gx, &gy)?;
            gx = ngx;
            gy = ngy;
            g.isl = Some(gi);
        }
        if let (Some(dp), Some(dc)) = (&it.image_dc, &c.image_dc) {
            let (gp, gq, gd) = image_dc_backward(dc, op, dp, &gx)?;
            g.image_dc = Some(gd);
            let (gp, gq) = match (&it.unet, &it.lowrank) {
                (Some(_), Some(_)) => (Some(gp), Some(gq)),
                (Some(_), None) => (Some(gp.add(&gq)?), None),
                (None, Some(_)) => (None, Some(gp.add(&gq)?)),
                (None, None) => (None, None),
            };
            let mut gxi = ComplexTensor::zeros(gx.dims());
            if let (Some(up), Some(uc), Some(gp)) = (&it.unet, &c.unet, gp) {
                let (gxu, gu) = unet_backward(uc, up, &gp)?;
                gxi.add_assign(&gxu)?;
                g.unet = Some(gu);
            }
            if let (Some(lp), Some(lc), Some(gq)) = (&it.lowrank, &c.lowrank, gq) {
                let (gxl, gl) = lowrank_backward(lc, lp, &gq)?;
                gxi.add_assign(&gxl)?;
                g.lowrank = Some(gl);
            }
            gx = gxi;
        }
        if let (Some(kp), Some(dp), Some(kc), Some(r)) = (&it.knet, &it.kspace_dc, &c.knet, &c.r) {
            let (gr, gd) = kspace_dc_backward(r, y_u, op.mask(), dp, &gy)?;
            let (ngy, gk) = knet_backward(kc, kp, &gr)?;
            gy = ngy;
            g.knet = Some(gk);
            g.kspace_dc = Some(gd);
        }
        grads.push(g);
    }
    grads.reverse();
    Ok(Network {
        config: net.config.clone(),
        dims: net.dims,
        iterations: grads,
    })
}

/// Full-scale configuration (8 iterations, 12 base filters, 5x5 spatial and
/// 3-frame temporal kernels, 25 frames, (5, 4, 4) patches, 15 coils) for
/// parameter-count reporting.
pub fn full_scale() -> (NetworkConfig, Dims) {
    (
        NetworkConfig {
            iterations: 8,
            filters: 12,
            spatial_kernel: 5,
            temporal_kernel: 3,
            kspace_filters: 12,
            patches: PatchSpec { nt: 5, nx: 4, ny: 4 },
            ..NetworkConfig::default()
        },
        Dims {
            frames: 25,
            nx: 176,
            ny: 176,
            coils: 15,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::mri::{make_dataset, SamplingMask};

    fn dims() -> Dims {
        Dims {
            frames: 4,
            nx: 8,
            ny: 8,
            coils: 2,
        }
    }

    fn sample(seed: u64) -> CineSample {
        make_dataset(1, dims(), (3.0, 3.0), 2, seed).unwrap().remove(0)
    }

    fn run(net: &Network, s: &CineSample) -> (State, OpTrace) {
        let op = s.operator().unwrap();
        let mut trace = OpTrace::default();
        let (out, _) = forward(net, &init_state(s).unwrap(), &Problem::new(&op, &s.under_kspace), SvtMode::Hard, &mut trace).unwrap();
        (out, trace)
    }

    #[test]
    fn init_state_full_sampling_recovers_reference() {
        let s = sample(1);
        let full = s.with_mask(SamplingMask::full(4, 8), 1.0).unwrap();
        let st = init_state(&full).unwrap();
        assert!(st.x.max_abs_diff(&s.reference).unwrap() < 1e-10);
        let zero = CineSample::from_reference(ComplexTensor::zeros(&[4, 8, 8]), s.maps.clone(), s.mask.clone(), 3.0).unwrap();
        assert_eq!(init_state(&zero).unwrap().x.norm(), 0.0);
    }

    #[test]
    fn zero_filled_quality_drops_with_acceleration() {
        let d = Dims { frames: 8, nx: 32, ny: 32, coils: 4 };
        let s = make_dataset(1, d, (2.0, 2.0), 4, 3).unwrap().remove(0);
        let mut last = f64::INFINITY;
        for r in [2.0, 4.0, 8.0] {
            let mask = crate::mri::generate_mask(8, 32, r, 4, &mut Rng::new(9)).unwrap();
            let x0 = init_state(&s.with_mask(mask, r).unwrap()).unwrap().x;
            let p = psnr(&x0, &s.reference).unwrap();
            assert!(p < last, "R={r}: {p} dB");
            last = p;
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let s = sample(2);
        let cfg = NetworkConfig { iterations: 0, ..NetworkConfig::default() };
        let net = Network::init(cfg, dims(), &mut Rng::new(1)).unwrap();
        assert_eq!(net.count_params(), 0);
        let (out, trace) = run(&net, &s);
        assert_eq!(out, init_state(&s).unwrap());
        assert_eq!(trace, OpTrace::default());
    }

    #[test]
    fn zero_weights_without_dc_step_is_identity() {
        let s = sample(3);
        let cfg = NetworkConfig {
            isl: false,
            ..NetworkConfig::default()
        };
        let mut net = Network::init(cfg, dims(), &mut Rng::new(2)).unwrap();
        net.visit_mut("", &mut |name, t, _| {
            if name.contains("unet") || name.contains("knet") {
                *t = ComplexTensor::zeros(t.dims());
            }
        });
        for it in &mut net.iterations {
            it.image_dc.as_mut().unwrap().eta.set(0.0);
            it.lowrank = Some(LowRankParams::with_tau(PatchSpec::default(), -40.0));
        }
        let (out, _) = run(&net, &s);
        let x0 = init_state(&s).unwrap().x;
        assert!(out.x.max_abs_diff(&x0).unwrap() < 1e-12);
    }

    #[test]
    fn variants_run_only_their_components() {
        let s = sample(4);
        for name in VARIANTS {
            let cfg = NetworkConfig::variant(name).unwrap();
            let net = Network::init(cfg.clone(), dims(), &mut Rng::new(5)).unwrap();
            let (out, t) = run(&net, &s);
            assert!(out.x.is_finite() && out.y.is_finite(), "{name}");
            assert_eq!(out.x.dims(), &[4, 8, 8]);
            assert_eq!(out.y.dims(), &[4, 2, 8, 8]);
            let n = cfg.iterations;
            match name {
                "A-INet" => {
                    assert_eq!((t.kspace_convs, t.isl_calls, t.lowrank_calls), (0, 0, 0));
                    assert_eq!((t.unet_calls, t.image_dc_calls), (n, n));
                }
                "A-KNet" => {
                    assert_eq!((t.unet_calls, t.image_dc_calls, t.isl_calls), (0, 0, 0));
                    assert_eq!(t.kspace_dc_calls, n);
                }
                "LIKNet" => assert_eq!(t.attention_blocks, 0),
                "A-LIKNet" => {
                    assert_eq!(t.attention_blocks, 4 * n);
                    assert_eq!(t.isl_calls, n);
                }
                _ => {}
            }
        }
        assert!(NetworkConfig::variant("B-Net").is_err());
    }

    #[test]
    fn invalid_toggles_rejected() {
        let cfg = NetworkConfig { kspace_net: false, ..NetworkConfig::default() };
        assert!(matches!(Network::init(cfg, dims(), &mut Rng::new(0)), Err(Error::Config(_))));
        let cfg = NetworkConfig {
            image_net: false,
            lowrank: false,
            kspace_net: false,
            isl: false,
            ..NetworkConfig::default()
        };
        assert!(Network::init(cfg, dims(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let s = sample(6);
        let net = Network::init(NetworkConfig::default(), dims(), &mut Rng::new(7)).unwrap();
        assert_eq!(run(&net, &s).0, run(&net, &s).0);
    }

    #[test]
    fn parameter_count_scales_with_iterations() {
        let one = Network::init(NetworkConfig { iterations: 1, ..NetworkConfig::default() }, dims(), &mut Rng::new(0)).unwrap();
        let three = Network::init(NetworkConfig { iterations: 3, ..NetworkConfig::default() }, dims(), &mut Rng::new(0)).unwrap();
        assert_eq!(three.count_params(), 3 * one.count_params());
        let total: usize = one.breakdown().iter().map(|(_, n)| n).sum();
        assert_eq!(total, one.count_params());
        // scalar layers: eta, alpha, mu, a, b
        let scalars: usize = one
            .breakdown()
            .iter()
            .filter(|(c, _)| ["image_dc", "kspace_dc", "isl"].contains(c))
            .map(|(_, n)| n)
            .sum();
        assert_eq!(scalars, 5);
    }
}
