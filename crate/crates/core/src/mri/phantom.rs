use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor, Rng};

/// Static ellipse: centre, semi-axes and intensity, in normalized
/// field-of-view coordinates ([-1, 1] along each axis).
#[derive(Clone, Debug)]
struct Ellipse {
    cu: f64,
    cv: f64,
    au: f64,
    av: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        ((u - self.cu) / self.au).powi(2) + ((v - self.cv) / self.av).powi(2) <= 1.0
    }
}

/// Randomized layout of one cine phantom.
#[derive(Clone, Debug)]
pub struct PhantomGeometry {
    background: Vec<Ellipse>,
    heart_u: f64,
    heart_v: f64,
    outer_radius: f64,
    inner_mean: f64,
    inner_swing: f64,
    myocardium: f64,
    blood: f64,
    phase: [f64; 3],
}

/// Half-width of the smooth edges, in pixels.
const EDGE_PX: f64 = 0.75;

fn smooth_edge(signed_distance: f64, width: f64) -> f64 {
    if signed_distance <= -width {
        0.0
    } else if signed_distance >= width {
        1.0
    } else {
        let s = (signed_distance + width) / (2.0 * width);
        s * s * (3.0 - 2.0 * s)
    }
}

impl PhantomGeometry {
    pub fn sample(rng: &mut Rng) -> Self {
        let mut jitter = |scale: f64| scale * (2.0 * rng.uniform() - 1.0);
        let background = vec![
            Ellipse { cu: 0.0, cv: 0.0, au: 0.9 + jitter(0.05), av: 0.75 + jitter(0.05), value: 0.25 },
            Ellipse { cu: -0.5 + jitter(0.05), cv: 0.4 + jitter(0.05), au: 0.25, av: 0.2, value: 0.5 },
            Ellipse { cu: 0.5 + jitter(0.05), cv: -0.45 + jitter(0.05), au: 0.15, av: 0.22, value: 0.7 },
            Ellipse { cu: 0.55 + jitter(0.03), cv: 0.45 + jitter(0.03), au: 0.12, av: 0.12, value: 0.35 },
        ];
        let outer_radius = 0.42 + jitter(0.03);
        PhantomGeometry {
            background,
            heart_u: jitter(0.06),
            heart_v: jitter(0.06),
            outer_radius,
            inner_mean: 0.24 + jitter(0.02),
            inner_swing: 0.07 + jitter(0.015),
            myocardium: 0.45 + jitter(0.05),
            blood: 1.0,
            phase: [jitter(0.6), jitter(0.6), jitter(0.8)],
        }
    }

    fn coords(x: usize, y: usize, nx: usize, ny: usize) -> (f64, f64) {
        let u = (x as f64 - (nx / 2) as f64) / (nx as f64 / 2.0);
        let v = (y as f64 - (ny / 2) as f64) / (ny as f64 / 2.0);
        (u, v)
    }

    fn edge_width(nx: usize, ny: usize) -> f64 {
        EDGE_PX / (nx.min(ny) as f64 / 2.0)
    }

    /// Radius inside which pixel values may change over the cycle.
    fn dynamic_radius(&self, nx: usize, ny: usize) -> f64 {
        self.inner_mean + self.inner_swing.abs() + Self::edge_width(nx, ny)
    }

    fn inner_radius(&self, t: usize, frames: usize) -> f64 {
        self.inner_mean + self.inner_swing * (2.0 * PI * t as f64 / frames as f64).cos()
    }

    /// Unnormalized `(time, x, y)` image.
    pub fn render(&self, frames: usize, nx: usize, ny: usize) -> ComplexTensor {
        let w = Self::edge_width(nx, ny);
        let mut img = ComplexTensor::zeros(&[frames, nx, ny]);
        let plane = nx * ny;
        let data = img.data_mut();
        for x in 0..nx {
            for y in 0..ny {
                let (u, v) = Self::coords(x, y, nx, ny);
                let bg = self
                    .background
                    .iter()
                    .filter(|e| e.contains(u, v))
                    .last()
                    .map_or(0.0, |e| e.value);
                let r = ((u - self.heart_u).powi(2) + (v - self.heart_v).powi(2)).sqrt();
                let wall = smooth_edge(self.outer_radius - r, w);
                let phase = self.phase[0] * u + self.phase[1] * v + self.phase[2] * (u * u + v * v);
                let rot = c64::from_polar(1.0, phase);
                for t in 0..frames {
                    let pool = smooth_edge(self.inner_radius(t, frames) - r, w);
                    let heart = self.myocardium + (self.blood - self.myocardium) * pool;
                    let mag = bg * (1.0 - wall) + heart * wall;
                    data[t * plane + x * ny + y] = rot * mag;
                }
            }
        }
        img
    }
}

/// Pixels (flat `x * ny + y`) whose value can vary between frames.
pub fn dynamic_region(geometry: &PhantomGeometry, nx: usize, ny: usize) -> Vec<bool> {
    let radius = geometry.dynamic_radius(nx, ny);
    let mut out = Vec::with_capacity(nx * ny);
    for x in 0..nx {
        for y in 0..ny {
            let (u, v) = PhantomGeometry::coords(x, y, nx, ny);
            let r = ((u - geometry.heart_u).powi(2) + (v - geometry.heart_v).powi(2)).sqrt();
            out.push(r < radius);
        }
    }
    out
}

/// Dynamic cine phantom normalized to unit peak magnitude, plus the layout
/// it was drawn from.
///
/// Static ellipses surround a "ventricle": a myocardial ring whose blood
/// pool radius follows one cosine period over the frames, so the sequence
/// is periodic. A smooth quadratic phase is applied.
pub fn generate_phantom(
    frames: usize,
    nx: usize,
    ny: usize,
    rng: &mut Rng,
) -> Result<(ComplexTensor, PhantomGeometry)> {
    if frames < 2 {
        return Err(Error::config("phantom needs at least two frames"));
    }
    if nx < 4 || ny < 4 {
        return Err(Error::config("phantom needs at least 4x4 pixels"));
    }
    let geometry = PhantomGeometry::sample(rng);
    let img = geometry.render(frames, nx, ny);
    let peak = img.max_abs();
    Ok((img.scale(1.0 / peak), geometry))
}
