use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, ParamKind, Params, RealVector};
use crate::tensor::{c64, ComplexTensor};

/// Number of temporal groups and spatial patches along x and y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { nt: 2, nx: 2, ny: 2 }
    }
}

/// Concrete patch geometry for one image size.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchLayout {
    pub dims: [usize; 3],
    pub frames_per_group: usize,
    pub size: [usize; 2],
    pub x_starts: Vec<usize>,
    pub y_starts: Vec<usize>,
}

fn axis_starts(extent: usize, n: usize) -> (usize, Vec<usize>) {
    let base = extent.div_ceil(n);
    let size = (base + base / 4).min(extent);
    let starts = if n == 1 {
        vec![0]
    } else {
        (0..n)
            .map(|i| (i as f64 * (extent - size) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    (size, starts)
}

impl PatchSpec {
    pub fn count(&self) -> usize {
        self.nt * self.nx * self.ny
    }

    pub fn layout(&self, dims: [usize; 3]) -> Result<PatchLayout> {
        let [t, x, y] = dims;
        if self.nt == 0 || self.nx == 0 || self.ny == 0 {
            return Err(Error::config(format!("patch counts must be positive, got {self:?}")));
        }
        if t % self.nt != 0 {
            return Err(Error::config(format!(
                "{} temporal groups do not divide {t} frames",
                self.nt
            )));
        }
        if x == 0 || y == 0 {
            return Err(Error::config("image must be non-empty"));
        }
        let (sx, x_starts) = axis_starts(x, self.nx);
        let (sy, y_starts) = axis_starts(y, self.ny);
        Ok(PatchLayout {
            dims,
            frames_per_group: t / self.nt,
            size: [sx, sy],
            x_starts,
            y_starts,
        })
    }
}

impl PatchLayout {
    fn count(&self) -> usize {
        self.dims[0] / self.frames_per_group * self.x_starts.len() * self.y_starts.len()
    }

    /// `(first frame, x start, y start)` of patch `i`, group-major.
    fn origin(&self, i: usize) -> (usize, usize, usize) {
        let per_group = self.x_starts.len() * self.y_starts.len();
        let g = i / per_group;
        let r = i % per_group;
        (
            g * self.frames_per_group,
            self.x_starts[r / self.y_starts.len()],
            self.y_starts[r % self.y_starts.len()],
        )
    }

    /// Calls `f(row, col, flat image index)` over every entry of patch `i`'s
    /// Casorati matrix (rows are pixels, columns are frames).
    fn for_each(&self, i: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [_, nx, ny] = self.dims;
        let [sx, sy] = self.size;
        let (t0, x0, y0) = self.origin(i);
        for col in 0..self.frames_per_group {
            for px in 0..sx {
                for py in 0..sy {
                    f(px * sy + py, col, ((t0 + col) * nx + x0 + px) * ny + y0 + py);
                }
            }
        }
    }

    fn coverage(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.dims.iter().product()];
        for i in 0..self.count() {
            self.for_each(i, |_, _, idx| counts[idx] += 1.0);
        }
        counts
    }

    pub fn split(&self, x: &ComplexTensor) -> Result<Vec<DMatrix<c64>>> {
        if x.dims() != self.dims {
            return Err(Error::shape(x.dims(), &self.dims, "patch split"));
        }
        let xd = x.data();
        Ok((0..self.count())
            .map(|i| {
                let mut m = DMatrix::zeros(self.size[0] * self.size[1], self.frames_per_group);
                self.for_each(i, |r, c, idx| m[(r, c)] = xd[idx]);
                m
            })
            .collect())
    }

    /// Sums patch entries back into image positions.
    fn scatter(&self, patches: &[DMatrix<c64>]) -> Result<ComplexTensor> {
        if patches.len() != self.count() {
            return Err(Error::config(format!(
                "expected {} patches, got {}",
                self.count(),
                patches.len()
            )));
        }
        let mut out = ComplexTensor::zeros(&self.dims);
        let od = out.data_mut();
        for (i, p) in patches.iter().enumerate() {
            if p.shape() != (self.size[0] * self.size[1], self.frames_per_group) {
                return Err(Error::shape(&[p.nrows(), p.ncols()], &[self.size[0] * self.size[1], self.frames_per_group], "patch"));
            }
            self.for_each(i, |r, c, idx| od[idx] += p[(r, c)]);
        }
        Ok(out)
    }

    /// Averages overlapping patches into an image.
    pub fn merge(&self, patches: &[DMatrix<c64>]) -> Result<ComplexTensor> {
        let mut out = self.scatter(patches)?;
        for (v, n) in out.data_mut().iter_mut().zip(self.coverage()) {
            *v /= n;
        }
        Ok(out)
    }
}

pub fn patch_split(x: &ComplexTensor, spec: &PatchSpec) -> Result<Vec<DMatrix<c64>>> {
    image_dims(x)
        .and_then(|d| spec.layout(d))
        .and_then(|l| l.split(x))
}

pub fn patch_merge(patches: &[DMatrix<c64>], spec: &PatchSpec, dims: [usize; 3]) -> Result<ComplexTensor> {
    spec.layout(dims)?.merge(patches)
}

fn image_dims(x: &ComplexTensor) -> Result<[usize; 3]> {
    match *x.dims() {
        [t, a, b] => Ok([t, a, b]),
        _ => Err(Error::shape(x.dims(), &[0; 3], "image must be (T, X, Y)")),
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Hard thresholding keeps singular values above the threshold unchanged.
/// The surrogate replaces the step with `sigmoid((s - z) / eps)`,
/// `eps = SURROGATE_WIDTH * largest singular value`, and is only used to
/// check threshold gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SvtMode {
    #[default]
    Hard,
    Surrogate,
}

pub const SURROGATE_WIDTH: f64 = 0.01;
const SVD_MAX_ITER: usize = 100_000;

pub struct SvtCache {
    transposed: bool,
    input: DMatrix<c64>,
    u: DMatrix<c64>,
    sigma: DVector<f64>,
    v: DMatrix<c64>,
    tau: f64,
    zeta: f64,
    sigma_max: f64,
}

impl SvtCache {
    pub fn singular_values(&self) -> &[f64] {
        self.sigma.as_slice()
    }

    pub fn threshold(&self) -> f64 {
        self.zeta
    }

    fn kept(&self, j: usize) -> bool {
        self.sigma[j] > self.zeta
    }

    fn eps(&self) -> f64 {
        SURROGATE_WIDTH * self.sigma_max
    }

    /// Derivative of the surrogate singular value with respect to the threshold.
    fn dsigma_dzeta(&self, j: usize) -> f64 {
        let eps = self.eps();
        if eps == 0.0 {
            return 0.0;
        }
        let s = (self.sigma[j] - self.zeta) / eps;
        let sg = sigmoid(s);
        let step = if self.kept(j) { -1.0 } else { 0.0 };
        step + sg - self.zeta / eps * sg * (1.0 - sg)
    }
}

/// Singular value thresholding of a Casorati matrix with threshold
/// `sigmoid(tau) * largest singular value`.
pub fn svt(x: &DMatrix<c64>, tau: f64, mode: SvtMode) -> Result<(DMatrix<c64>, SvtCache)> {
    // work on a matrix with at least as many rows as columns so V is square
    let transposed = x.nrows() < x.ncols();
    let a = if transposed { x.adjoint() } else { x.clone() };
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numeric("singular value decomposition did not converge".into()))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numeric("singular vectors missing".into())),
    };
    let sigma = svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let zeta = sigmoid(tau) * sigma_max;
    let cache = SvtCache {
        transposed,
        input: a,
        u,
        sigma,
        v: v_t.adjoint(),
        tau,
        zeta,
        sigma_max,
    };
    let n = cache.sigma.len();
    let new_sigma: Vec<f64> = (0..n)
        .map(|j| {
            let s = cache.sigma[j];
            match mode {
                SvtMode::Hard => {
                    if cache.kept(j) {
                        s
                    } else {
                        0.0
                    }
                }
                SvtMode::Surrogate => {
                    let eps = cache.eps();
                    let step = if eps == 0.0 { 0.0 } else { sigmoid((s - zeta) / eps) };
                    (s - zeta).max(0.0) + zeta * step
                }
            }
        })
        .collect();
    let mut y = DMatrix::zeros(cache.input.nrows(), cache.input.ncols());
    for (j, &s) in new_sigma.iter().enumerate() {
        if s != 0.0 {
            let uj = cache.u.column(j);
            let vj = cache.v.column(j);
            y += (uj * c64::new(s, 0.0)) * vj.adjoint();
        }
    }
    let y = if transposed { y.adjoint() } else { y };
    Ok((y, cache))
}

/// Cotangents of the matrix and of `tau`.
///
/// The matrix cotangent is the exact derivative of the hard-thresholded
/// output `X P`, `P` the projector onto the kept right singular vectors,
/// including the rotation of that subspace. The `tau` cotangent goes
/// through the smoothed step in either mode.
pub fn svt_backward(cache: &SvtCache, g: &DMatrix<c64>) -> Result<(DMatrix<c64>, f64)> {
    let g = if cache.transposed { g.adjoint() } else { g.clone() };
    if g.shape() != cache.input.shape() {
        return Err(Error::shape(&[g.nrows(), g.ncols()], &[cache.input.nrows(), cache.input.ncols()], "svt upstream"));
    }
    let n = cache.sigma.len();
    let a = &cache.input;
    let v = &cache.v;

    let mut p = DMatrix::<c64>::zeros(n, n);
    for j in (0..n).filter(|&j| cache.kept(j)) {
        p += v.column(j) * v.column(j).adjoint();
    }
    let mut grad = &g * p;

    let lambda: Vec<f64> = cache.sigma.iter().map(|s| s * s).collect();
    let mut inner = v.adjoint() * a.adjoint() * &g * v;
    for r in 0..n {
        for c in 0..n {
            let f = match (cache.kept(r), cache.kept(c)) {
                (true, false) => 1.0 / (lambda[r] - lambda[c]),
                (false, true) => 1.0 / (lambda[c] - lambda[r]),
                _ => 0.0,
            };
            inner[(r, c)] *= f;
        }
    }
    let w = v * inner * v.adjoint();
    grad += a * (&w + w.adjoint());

    let dzeta_dtau = sigmoid(cache.tau) * (1.0 - sigmoid(cache.tau)) * cache.sigma_max;
    let mut gtau = 0.0;
    for j in 0..n {
        let proj = (cache.u.column(j).adjoint() * &g * cache.v.column(j))[(0, 0)].re;
        gtau += proj * cache.dsigma_dzeta(j);
    }
    gtau *= dzeta_dtau;

    let grad = if cache.transposed { grad.adjoint() } else { grad };
    Ok((grad, gtau))
}

/// One threshold parameter per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankParams {
    pub spec: PatchSpec,
    pub tau: RealVector,
}

pub const TAU_INIT: f64 = -2.0;

impl LowRankParams {
    pub fn new(spec: PatchSpec) -> Self {
        LowRankParams {
            spec,
            tau: RealVector::from_values(&vec![TAU_INIT; spec.count()]),
        }
    }

    pub fn with_tau(spec: PatchSpec, tau: f64) -> Self {
        LowRankParams {
            spec,
            tau: RealVector::from_values(&vec![tau; spec.count()]),
        }
    }

    /// One threshold per patch, in patch order.
    pub fn with_tau_values(spec: PatchSpec, taus: &[f64]) -> Self {
        assert_eq!(taus.len(), spec.count(), "one threshold per patch");
        LowRankParams {
            spec,
            tau: RealVector::from_values(taus),
        }
    }
}

impl Params for LowRankParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ComplexTensor, ParamKind)) {
        f(&join(prefix, "tau"), &self.tau.0, ParamKind::Real);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ComplexTensor, ParamKind)) {
        f(&join(prefix, "tau"), &mut self.tau.0, ParamKind::Real);
    }
}

pub struct LowRankCache {
    layout: PatchLayout,
    patches: Vec<SvtCache>,
}

impl LowRankCache {
    pub fn patches(&self) -> &[SvtCache] {
        &self.patches
    }
}

/// Split into patches, threshold each with its own `tau`, merge.
pub fn lowrank_forward(x: &ComplexTensor, params: &LowRankParams, mode: SvtMode) -> Result<(ComplexTensor, LowRankCache)> {
    let layout = params.spec.layout(image_dims(x)?)?;
    let taus = params.tau.values();
    if taus.len() != layout.count() {
        return Err(Error::shape(&[taus.len()], &[layout.count()], "one tau per patch"));
    }
    let mut outs = Vec::with_capacity(taus.len());
    let mut caches = Vec::with_capacity(taus.len());
    for (i, (p, &tau)) in layout.split(x)?.iter().zip(&taus).enumerate() {
        let (y, c) = svt(p, tau, mode).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("patch {i}: {m}")),
            e => e,
        })?;
        outs.push(y);
        caches.push(c);
    }
    let out = layout.merge(&outs)?;
    Ok((out, LowRankCache { layout, patches: caches }))
}

pub fn lowrank_backward(cache: &LowRankCache, params: &LowRankParams, g: &ComplexTensor) -> Result<(ComplexTensor, LowRankParams)> {
    let layout = &cache.layout;
    let mut scaled = g.clone();
    for (v, n) in scaled.data_mut().iter_mut().zip(layout.coverage()) {
        *v /= n;
    }
    let gp = layout.split(&scaled)?;
    let mut gx_patches = Vec::with_capacity(gp.len());
    let mut gtau = Vec::with_capacity(gp.len());
    for (c, g) in cache.patches.iter().zip(&gp) {
        let (gx, gt) = svt_backward(c, g)?;
        gx_patches.push(gx);
        gtau.push(gt);
    }
    Ok((
        layout.scatter(&gx_patches)?,
        LowRankParams {
            spec: params.spec,
            tau: RealVector::from_values(&gtau),
        },
    ))
}
