//! Data-consistency layers for the image and k-space branches and the
//! information sharing layer that couples them.
//!
//! Scalar parameters are stored unconstrained and mapped to their valid
//! range on use: the image mixing weight is clamped to [0, 1], the k-space
//! weight goes through softplus and the sharing weights through sigmoid.

use crate::error::{Error, Result};
use crate::mri::{EncodingOperator, SamplingMask};
use crate::nn::{join, ParamKind, Params, RealScalar};
use crate::tensor::{c64, ComplexTensor};

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

pub fn softplus_inverse(v: f64) -> f64 {
    v.exp_m1().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDcParams {
    pub eta: RealScalar,
    pub alpha: RealScalar,
}

impl Default for ImageDcParams {
    fn default() -> Self {
        ImageDcParams {
            eta: RealScalar::new(1.0),
            alpha: RealScalar::new(0.5),
        }
    }
}

impl ImageDcParams {
    pub fn alpha(&self) -> f64 {
        self.alpha.get().clamp(0.0, 1.0)
    }
}

impl Params for ImageDcParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.eta.visit(&join(prefix, "eta"), f);
        self.alpha.visit(&join(prefix, "alpha"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.eta.visit_mut(&join(prefix, "eta"), f);
        self.alpha.visit_mut(&join(prefix, "alpha"), f);
    }
}

pub struct ImageDcCache {
    p: ComplexTensor,
    q: ComplexTensor,
    /// `A^H (A x_init - y_u)`
    gradient: ComplexTensor,
}

/// `x_init = alpha p + (1 - alpha) q`, then one gradient step
/// `x_init - eta A^H (A x_init - y_u)`.
pub fn image_dc(
    p: &ComplexTensor,
    q: &ComplexTensor,
    y_u: &ComplexTensor,
    op: &EncodingOperator,
    params: &ImageDcParams,
) -> Result<(ComplexTensor, ImageDcCache)> {
    p.check_same_dims(q, "image DC inputs")?;
    let alpha = params.alpha();
    let mut x_init = q.scale(1.0 - alpha);
    x_init.axpy(alpha, p)?;
    let residual = op.forward(&x_init)?.sub(y_u)?;
    let gradient = op.adjoint(&residual)?;
    let mut out = x_init;
    out.axpy(-params.eta.get(), &gradient)?;
    Ok((
        out,
        ImageDcCache {
            p: p.clone(),
            q: q.clone(),
            gradient,
        },
    ))
}

/// Cotangents of `p`, `q` and the parameters.
pub fn image_dc_backward(
    cache: &ImageDcCache,
    op: &EncodingOperator,
    params: &ImageDcParams,
    g: &ComplexTensor,
) -> Result<(ComplexTensor, ComplexTensor, ImageDcParams)> {
    let mut g_init = g.clone();
    g_init.axpy(-params.eta.get(), &op.normal(g)?)?;
    let g_eta = -g.real_inner(&cache.gradient)?;
    let raw = params.alpha.get();
    let g_alpha = if (0.0..=1.0).contains(&raw) {
        g_init.real_inner(&cache.p.sub(&cache.q)?)?
    } else {
        0.0
    };
    let alpha = params.alpha();
    Ok((
        g_init.scale(alpha),
        g_init.scale(1.0 - alpha),
        ImageDcParams {
            eta: RealScalar::new(g_eta),
            alpha: RealScalar::new(g_alpha),
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KDcParams {
    /// Pre-softplus weight.
    pub mu: RealScalar,
}

impl Default for KDcParams {
    fn default() -> Self {
        KDcParams {
            mu: RealScalar::new(softplus_inverse(1.0)),
        }
    }
}

impl KDcParams {
    pub fn mu(&self) -> f64 {
        softplus(self.mu.get())
    }
}

impl Params for KDcParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.mu.visit(&join(prefix, "mu"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.mu.visit_mut(&join(prefix, "mu"), f);
    }
}

fn check_kspace(t: &ComplexTensor, mask: &SamplingMask) -> Result<(usize, usize)> {
    match *t.dims() {
        [frames, c, nx, ny] if frames == mask.frames() && ny == mask.lines() => Ok((c, nx)),
        _ => Err(Error::shape(t.dims(), &[mask.frames(), 0, 0, mask.lines()], "k-space vs mask")),
    }
}

fn for_each_sampled(dims: &[usize], mask: &SamplingMask, mut f: impl FnMut(usize)) {
    let [frames, c, nx, ny] = [dims[0], dims[1], dims[2], dims[3]];
    for t in 0..frames {
        for row in 0..c * nx {
            let base = (t * c * nx + row) * ny;
            for (ky, &on) in mask.frame(t).iter().enumerate() {
                if on {
                    f(base + ky);
                }
            }
        }
    }
}

/// `(y_u + mu r) / (1 + mu)` on sampled lines, `r` elsewhere, for an
/// explicit effective weight `mu >= 0`.
pub fn kspace_dc_weighted(r: &ComplexTensor, y_u: &ComplexTensor, mask: &SamplingMask, mu: f64) -> Result<ComplexTensor> {
    r.check_same_dims(y_u, "k-space DC inputs")?;
    check_kspace(r, mask)?;
    let mut out = r.clone();
    let (od, yd) = (out.data_mut(), y_u.data());
    for_each_sampled(r.dims(), mask, |i| {
        od[i] = (yd[i] + od[i] * mu) / (1.0 + mu);
    });
    Ok(out)
}

pub fn kspace_dc(r: &ComplexTensor, y_u: &ComplexTensor, mask: &SamplingMask, params: &KDcParams) -> Result<ComplexTensor> {
    kspace_dc_weighted(r, y_u, mask, params.mu())
}

/// Cotangents of `r` and the parameters.
pub fn kspace_dc_backward(
    r: &ComplexTensor,
    y_u: &ComplexTensor,
    mask: &SamplingMask,
    params: &KDcParams,
    g: &ComplexTensor,
) -> Result<(ComplexTensor, KDcParams)> {
    r.check_same_dims(g, "k-space DC upstream")?;
    check_kspace(r, mask)?;
    let mu = params.mu();
    let mut gr = g.clone();
    let mut dmu = 0.0;
    let (grd, rd, yd) = (gr.data_mut(), r.data(), y_u.data());
    for_each_sampled(r.dims(), mask, |i| {
        let gv = grd[i];
        let diff: c64 = rd[i] - yd[i];
        dmu += (gv.conj() * diff).re;
        grd[i] = gv * (mu / (1.0 + mu));
    });
    dmu /= (1.0 + mu) * (1.0 + mu);
    Ok((
        gr,
        KDcParams {
            mu: RealScalar::new(dmu * sigmoid(params.mu.get())),
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IslParams {
    /// Pre-sigmoid weight of the image estimate in the k-space update.
    pub a: RealScalar,
    /// Pre-sigmoid weight of the k-space estimate in the image update.
    pub b: RealScalar,
}

impl Default for IslParams {
    fn default() -> Self {
        IslParams {
            a: RealScalar::new(logit(0.5)),
            b: RealScalar::new(logit(0.5)),
        }
    }
}

impl IslParams {
    pub fn a(&self) -> f64 {
        sigmoid(self.a.get())
    }

    pub fn b(&self) -> f64 {
        sigmoid(self.b.get())
    }
}

impl Params for IslParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        self.a.visit(&join(prefix, "a"), f);
        self.b.visit(&join(prefix, "b"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        self.a.visit_mut(&join(prefix, "a"), f);
        self.b.visit_mut(&join(prefix, "b"), f);
    }
}

pub struct IslCache {
    x: ComplexTensor,
    y: ComplexTensor,
    fs_x: ComplexTensor,
    fs_adj_y: ComplexTensor,
}

/// `y' = a FS x + (1 - a) y`, then `x' = b (FS)^H y' + (1 - b) x`.
/// Only the coil maps of `op` are used.
pub fn isl(
    x: &ComplexTensor,
    y: &ComplexTensor,
    op: &EncodingOperator,
    params: &IslParams,
) -> Result<(ComplexTensor, ComplexTensor, IslCache)> {
    let (a, b) = (params.a(), params.b());
    let fs_x = op.coil_fft(x)?;
    let mut y_new = y.scale(1.0 - a);
    y_new.axpy(a, &fs_x)?;
    let fs_adj_y = op.coil_ifft(&y_new)?;
    let mut x_new = x.scale(1.0 - b);
    x_new.axpy(b, &fs_adj_y)?;
    Ok((
        x_new,
        y_new,
        IslCache {
            x: x.clone(),
            y: y.clone(),
            fs_x,
            fs_adj_y,
        },
    ))
}

/// Cotangents of `x`, `y` and the parameters from those of `x'` and `y'`.
pub fn isl_backward(
    cache: &IslCache,
    op: &EncodingOperator,
    params: &IslParams,
    gx: &ComplexTensor,
    gy: &ComplexTensor,
) -> Result<(ComplexTensor, ComplexTensor, IslParams)> {
    let (a, b) = (params.a(), params.b());
    let g_b = gx.real_inner(&cache.fs_adj_y.sub(&cache.x)?)? * b * (1.0 - b);
    let mut gy_new = gy.clone();
    gy_new.axpy(b, &op.coil_fft(gx)?)?;
    let g_a = gy_new.real_inner(&cache.fs_x.sub(&cache.y)?)? * a * (1.0 - a);
    let mut g_x = gx.scale(1.0 - b);
    g_x.axpy(a, &op.coil_ifft(&gy_new)?)?;
    let g_y = gy_new.scale(1.0 - a);
    Ok((
        g_x,
        g_y,
        IslParams {
            a: RealScalar::new(g_a),
            b: RealScalar::new(g_b),
        },
    ))
}
