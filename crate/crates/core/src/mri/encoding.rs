use super::{CoilMaps, SamplingMask};
use crate::error::{Error, Result};
use crate::tensor::{c64, fft2_centered, ifft2_centered, ComplexTensor};

/// Spatial axes of a `(time, coil, kx, ky)` k-space tensor.
pub const KSPACE_AXES: (usize, usize) = (2, 3);

/// `A = M F S`: coil weighting, centered unitary 2-D FFT per frame and
/// coil, then Cartesian line selection.
#[derive(Clone, Debug)]
pub struct EncodingOperator {
    maps: CoilMaps,
    mask: SamplingMask,
}

impl EncodingOperator {
    pub fn new(maps: CoilMaps, mask: SamplingMask) -> Result<Self> {
        if mask.lines() != maps.ny() {
            return Err(Error::shape(
                &[mask.frames(), mask.lines()],
                maps.tensor().dims(),
                "mask ky extent vs coil maps",
            ));
        }
        Ok(EncodingOperator { maps, mask })
    }

    pub fn maps(&self) -> &CoilMaps {
        &self.maps
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    /// `(time, coil, kx, ky)` dims produced for an image of `frames` frames.
    pub fn kspace_dims(&self) -> [usize; 4] {
        [self.mask.frames(), self.maps.coils(), self.maps.nx(), self.maps.ny()]
    }

    fn image_dims(&self) -> [usize; 3] {
        [self.mask.frames(), self.maps.nx(), self.maps.ny()]
    }

    fn check_image(&self, x: &ComplexTensor) -> Result<()> {
        if x.dims() != self.image_dims() {
            return Err(Error::shape(x.dims(), &self.image_dims(), "image vs encoding operator"));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &ComplexTensor) -> Result<()> {
        if y.dims() != self.kspace_dims() {
            return Err(Error::shape(y.dims(), &self.kspace_dims(), "k-space vs encoding operator"));
        }
        Ok(())
    }

    /// `F S x` (no sampling).
    pub fn coil_fft(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_image(x)?;
        let [t, c, nx, ny] = self.kspace_dims();
        let plane = nx * ny;
        let mut coil_images = ComplexTensor::zeros(&[t, c, nx, ny]);
        {
            let out = coil_images.data_mut();
            for ti in 0..t {
                let frame = &x.data()[ti * plane..(ti + 1) * plane];
                for ci in 0..c {
                    let s = self.maps.coil(ci);
                    let dst = &mut out[(ti * c + ci) * plane..(ti * c + ci + 1) * plane];
                    for ((d, &sv), &xv) in dst.iter_mut().zip(s).zip(frame) {
                        *d = sv * xv;
                    }
                }
            }
        }
        fft2_centered(&coil_images, KSPACE_AXES)
    }

    /// `(F S)^H y = sum_c conj(S_c) F^-1 y_c` (no sampling).
    pub fn coil_ifft(&self, y: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_kspace(y)?;
        let coil_images = ifft2_centered(y, KSPACE_AXES)?;
        let [t, c, nx, ny] = self.kspace_dims();
        let plane = nx * ny;
        let mut x = ComplexTensor::zeros(&[t, nx, ny]);
        let out = x.data_mut();
        for ti in 0..t {
            let dst = &mut out[ti * plane..(ti + 1) * plane];
            for ci in 0..c {
                let s = self.maps.coil(ci);
                let src = &coil_images.data()[(ti * c + ci) * plane..(ti * c + ci + 1) * plane];
                for ((d, &sv), &yv) in dst.iter_mut().zip(s).zip(src) {
                    *d += sv.conj() * yv;
                }
            }
        }
        Ok(x)
    }

    /// Zero every unsampled line.
    pub fn apply_mask(&self, y: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_kspace(y)?;
        let [t, c, nx, ny] = self.kspace_dims();
        let mut out = y.clone();
        let data = out.data_mut();
        for ti in 0..t {
            let frame = self.mask.frame(ti);
            for ci in 0..c {
                for xi in 0..nx {
                    let row = ((ti * c + ci) * nx + xi) * ny;
                    for (ky, &on) in frame.iter().enumerate() {
                        if !on {
                            data[row + ky] = c64::new(0.0, 0.0);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `A x = M F S x`.
    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.apply_mask(&self.coil_fft(x)?)
    }

    /// `A^H y = S^H F^-1 M y`.
    pub fn adjoint(&self, y: &ComplexTensor) -> Result<ComplexTensor> {
        self.coil_ifft(&self.apply_mask(y)?)
    }

    /// `A^H A x`.
    pub fn normal(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.adjoint(&self.forward(x)?)
    }
}
