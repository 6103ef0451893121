use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};

use super::{c64, ComplexTensor};
use crate::error::{Error, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(n, dir)
            })
            .clone()
    })
}

/// Centered unitary transform along one axis, in place.
fn centered_axis(t: &mut ComplexTensor, axis: usize, inverse: bool) {
    let dims = t.dims().to_vec();
    let n = dims[axis];
    if n == 1 {
        return;
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let fft = plan(n, inverse);
    let scale = 1.0 / (n as f64).sqrt();
    let half = n / 2;
    let mut buf = vec![c64::new(0.0, 0.0); n];
    let mut scratch = vec![c64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let data = t.data_mut();
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            // ifftshift while gathering
            for (j, b) in buf.iter_mut().enumerate() {
                *b = data[base + ((j + half) % n) * inner + i];
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            // fftshift while scattering
            for (j, b) in buf.iter().enumerate() {
                data[base + ((j + half) % n) * inner + i] = b * scale;
            }
        }
    }
}

fn check_axes(t: &ComplexTensor, axes: (usize, usize)) -> Result<()> {
    for axis in [axes.0, axes.1] {
        if axis >= t.ndim() {
            return Err(Error::Axis {
                axis,
                ndim: t.ndim(),
            });
        }
    }
    if axes.0 == axes.1 {
        return Err(Error::config("fft axis pair must name two distinct axes"));
    }
    Ok(())
}

/// Centered unitary 2-D DFT along `axes`: ifftshift, transform, fftshift,
/// scaled by 1/sqrt(n0 * n1).
pub fn fft2_centered(t: &ComplexTensor, axes: (usize, usize)) -> Result<ComplexTensor> {
    check_axes(t, axes)?;
    let mut out = t.clone();
    centered_axis(&mut out, axes.0, false);
    centered_axis(&mut out, axes.1, false);
    Ok(out)
}

/// Inverse (and adjoint) of [`fft2_centered`].
pub fn ifft2_centered(t: &ComplexTensor, axes: (usize, usize)) -> Result<ComplexTensor> {
    check_axes(t, axes)?;
    let mut out = t.clone();
    centered_axis(&mut out, axes.0, true);
    centered_axis(&mut out, axes.1, true);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use std::f64::consts::PI;

    /// Quadratic-time centered DFT over the last two axes of a 2-D array.
    fn direct_dft(t: &ComplexTensor) -> ComplexTensor {
        let (nx, ny) = (t.dims()[0], t.dims()[1]);
        let (cx, cy) = ((nx / 2) as f64, (ny / 2) as f64);
        let mut out = ComplexTensor::zeros(t.dims());
        for kx in 0..nx {
            for ky in 0..ny {
                let mut acc = c64::new(0.0, 0.0);
                for x in 0..nx {
                    for y in 0..ny {
                        let phase = -2.0
                            * PI
                            * ((kx as f64 - cx) * (x as f64 - cx) / nx as f64
                                + (ky as f64 - cy) * (y as f64 - cy) / ny as f64);
                        acc += t.get(&[x, y]) * c64::from_polar(1.0, phase);
                    }
                }
                out.set(&[kx, ky], acc / ((nx * ny) as f64).sqrt());
            }
        }
        out
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = Rng::new(7);
        for dims in [[3usize, 8, 8], [2, 5, 7], [1, 6, 3]] {
            let t = rng.complex_tensor(&dims);
            let back = ifft2_centered(&fft2_centered(&t, (1, 2)).unwrap(), (1, 2)).unwrap();
            assert!(back.max_abs_diff(&t).unwrap() <= 1e-12 * t.max_abs());
        }
    }

    #[test]
    fn constant_maps_to_centered_impulse() {
        let c = c64::new(0.7, -0.2);
        for (nx, ny) in [(8, 8), (5, 6)] {
            let t = ComplexTensor::filled(&[nx, ny], c);
            let k = fft2_centered(&t, (0, 1)).unwrap();
            for x in 0..nx {
                for y in 0..ny {
                    let v = k.get(&[x, y]);
                    if x == nx / 2 && y == ny / 2 {
                        assert!((v - c * ((nx * ny) as f64).sqrt()).norm() < 1e-12);
                    } else {
                        assert!(v.norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = Rng::new(11);
        for dims in [[4usize, 4], [5, 3], [6, 7]] {
            let t = rng.complex_tensor(&dims);
            let fast = fft2_centered(&t, (0, 1)).unwrap();
            let slow = direct_dft(&t);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }
    }

    #[test]
    fn transform_along_leading_axes() {
        let mut rng = Rng::new(3);
        let t = rng.complex_tensor(&[4, 4, 2]);
        let k = fft2_centered(&t, (0, 1)).unwrap();
        for c in 0..2 {
            let mut plane = ComplexTensor::zeros(&[4, 4]);
            for x in 0..4 {
                for y in 0..4 {
                    plane.set(&[x, y], t.get(&[x, y, c]));
                }
            }
            let kp = direct_dft(&plane);
            for x in 0..4 {
                for y in 0..4 {
                    assert!((kp.get(&[x, y]) - k.get(&[x, y, c])).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bad_axis_is_shape_error() {
        let t = ComplexTensor::zeros(&[4, 4]);
        assert_eq!(fft2_centered(&t, (0, 2)).unwrap_err().category(), "shape");
    }
}
