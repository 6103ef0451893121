use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor};

/// Coil sensitivities, `(coil, x, y)`, normalized so that the squared
/// magnitudes sum to one at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    maps: ComplexTensor,
}

impl CoilMaps {
    /// Wrap a `(coil, x, y)` tensor after checking the normalization.
    pub fn new(maps: ComplexTensor) -> Result<Self> {
        if maps.ndim() != 3 || maps.dims()[0] == 0 {
            return Err(Error::shape(maps.dims(), &[0, 0, 0], "coil maps must be (coil, x, y)"));
        }
        let [c, x, y] = [maps.dims()[0], maps.dims()[1], maps.dims()[2]];
        let plane = x * y;
        for p in 0..plane {
            let s: f64 = (0..c).map(|ci| maps.data()[ci * plane + p].norm_sqr()).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "coil maps not normalized at pixel {p}: sum |S|^2 = {s}"
                )));
            }
        }
        Ok(CoilMaps { maps })
    }

    pub fn coils(&self) -> usize {
        self.maps.dims()[0]
    }

    pub fn nx(&self) -> usize {
        self.maps.dims()[1]
    }

    pub fn ny(&self) -> usize {
        self.maps.dims()[2]
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.maps
    }

    /// Map of one coil as a flat `x * y` slice.
    pub fn coil(&self, c: usize) -> &[c64] {
        let plane = self.nx() * self.ny();
        &self.maps.data()[c * plane..(c + 1) * plane]
    }
}

/// Smooth synthetic sensitivities: one Gaussian lobe per coil centred at
/// equally spaced angles around the field of view, each with its own linear
/// phase ramp, then normalized pixelwise.
pub fn generate_coil_maps(coils: usize, nx: usize, ny: usize) -> Result<CoilMaps> {
    if coils == 0 || nx == 0 || ny == 0 {
        return Err(Error::config("coil maps need at least one coil and pixel"));
    }
    let plane = nx * ny;
    let mut raw = vec![c64::new(0.0, 0.0); coils * plane];
    let radius = 0.8;
    let width = 0.7;
    for c in 0..coils {
        let angle = 2.0 * PI * c as f64 / coils as f64 + FRAC_PI_4;
        let (cu, cv) = (radius * angle.cos(), radius * angle.sin());
        for x in 0..nx {
            let u = (x as f64 - (nx / 2) as f64) / (nx as f64 / 2.0);
            for y in 0..ny {
                let v = (y as f64 - (ny / 2) as f64) / (ny as f64 / 2.0);
                let d2 = (u - cu).powi(2) + (v - cv).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = 0.5 * PI * (angle.cos() * u + angle.sin() * v) + 0.3 * c as f64;
                raw[c * plane + x * ny + y] = c64::from_polar(mag, phase);
            }
        }
    }
    for p in 0..plane {
        let norm = (0..coils)
            .map(|c| raw[c * plane + p].norm_sqr())
            .sum::<f64>()
            .sqrt();
        for c in 0..coils {
            raw[c * plane + p] /= norm;
        }
    }
    CoilMaps::new(ComplexTensor::from_vec(&[coils, nx, ny], raw)?)
}
