//! Image quality on magnitude images of shape `(T, X, Y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

pub const PSNR_CAP_DB: f64 = 300.0;
pub const SSIM_WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn magnitudes(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<(Vec<f64>, Vec<f64>)> {
    pred.check_same_dims(reference, "metric inputs")?;
    Ok((
        pred.data().iter().map(|v| v.norm()).collect(),
        reference.data().iter().map(|v| v.norm()).collect(),
    ))
}

/// `|| |pred| - |ref| || / || |ref| ||`.
pub fn nrmse(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<f64> {
    let (p, r) = magnitudes(pred, reference)?;
    let den: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("nrmse of an all-zero reference".into()));
    }
    let num: f64 = p.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Peak is `max |ref|`; capped at [`PSNR_CAP_DB`] for a vanishing error.
pub fn psnr(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<f64> {
    let (p, r) = magnitudes(pred, reference)?;
    if p.is_empty() {
        return Err(Error::UndefinedMetric("psnr of an empty image".into()));
    }
    let mse = p.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    if mse < 1e-30 {
        return Ok(PSNR_CAP_DB);
    }
    let peak = r.iter().cloned().fold(0.0, f64::max);
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn frames(t: &ComplexTensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [f, x, y] => Ok((f, x, y)),
        _ => Err(Error::shape(t.dims(), &[0; 3], "metrics expect (T, X, Y) images")),
    }
}

/// Mean SSIM per frame with a uniform 7x7 window over all valid positions,
/// dynamic range `max |ref|` over the whole series.
pub fn ssim_per_frame(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<Vec<f64>> {
    let (p, r) = magnitudes(pred, reference)?;
    let (nf, nx, ny) = frames(reference)?;
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::config(format!(
            "frame {nx}x{ny} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let range = r.iter().cloned().fold(0.0, f64::max);
    Ok((0..nf)
        .map(|f| {
            let off = f * nx * ny;
            ssim_frame(&p[off..off + nx * ny], &r[off..off + nx * ny], nx, ny, range)
        })
        .collect())
}

pub fn ssim(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<f64> {
    let per = ssim_per_frame(pred, reference)?;
    if per.is_empty() {
        return Err(Error::UndefinedMetric("ssim of an empty series".into()));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Windowed statistics via summed-area tables.
fn ssim_frame(a: &[f64], b: &[f64], nx: usize, ny: usize, range: f64) -> f64 {
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let w = SSIM_WINDOW;
    let sat = |f: &dyn Fn(usize) -> f64| {
        let mut s = vec![0.0; (nx + 1) * (ny + 1)];
        for i in 0..nx {
            for j in 0..ny {
                s[(i + 1) * (ny + 1) + j + 1] =
                    f(i * ny + j) + s[i * (ny + 1) + j + 1] + s[(i + 1) * (ny + 1) + j] - s[i * (ny + 1) + j];
            }
        }
        s
    };
    let sa = sat(&|k| a[k]);
    let sb = sat(&|k| b[k]);
    let saa = sat(&|k| a[k] * a[k]);
    let sbb = sat(&|k| b[k] * b[k]);
    let sab = sat(&|k| a[k] * b[k]);
    let boxsum = |s: &[f64], i: usize, j: usize| {
        s[(i + w) * (ny + 1) + j + w] - s[i * (ny + 1) + j + w] - s[(i + w) * (ny + 1) + j] + s[i * (ny + 1) + j]
    };
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=nx - w {
        for j in 0..=ny - w {
            let ma = boxsum(&sa, i, j) / n;
            let mb = boxsum(&sb, i, j) / n;
            let va = (boxsum(&saa, i, j) / n - ma * ma).max(0.0);
            let vb = (boxsum(&sbb, i, j) / n - mb * mb).max(0.0);
            let cov = boxsum(&sab, i, j) / n - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    total / count as f64
}

/// Metric values with per-frame SSIM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nrmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ssim_frames: Vec<f64>,
}

impl MetricReport {
    pub fn compute(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<Self> {
        let ssim_frames = ssim_per_frame(pred, reference)?;
        Ok(MetricReport {
            nrmse: nrmse(pred, reference)?,
            psnr_db: psnr(pred, reference)?,
            ssim: ssim_frames.iter().sum::<f64>() / ssim_frames.len().max(1) as f64,
            ssim_frames,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::generate_phantom;
    use crate::tensor::{c64, Rng};
    use proptest::prelude::*;

    fn real(dims: &[usize], v: &[f64]) -> ComplexTensor {
        ComplexTensor::from_real(dims, v).unwrap()
    }

    fn loop_ssim(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
        let (nf, nx, ny) = (a.dims()[0], a.dims()[1], a.dims()[2]);
        let l = b.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut frames = 0.0;
        for f in 0..nf {
            let mut acc = 0.0;
            let mut n = 0.0;
            for i in 0..=nx - 7 {
                for j in 0..=ny - 7 {
                    let mut xs = vec![];
                    let mut ys = vec![];
                    for di in 0..7 {
                        for dj in 0..7 {
                            xs.push(a.get(&[f, i + di, j + dj]).norm());
                            ys.push(b.get(&[f, i + di, j + dj]).norm());
                        }
                    }
                    let mx = xs.iter().sum::<f64>() / 49.0;
                    let my = ys.iter().sum::<f64>() / 49.0;
                    let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / 49.0;
                    let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / 49.0;
                    let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / 49.0;
                    acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    n += 1.0;
                }
            }
            frames += acc / n;
        }
        frames / nf as f64
    }

    #[test]
    fn nrmse_basic_values() {
        let mut rng = Rng::new(1);
        let r = rng.complex_tensor(&[2, 8, 8]);
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        assert!((nrmse(&ComplexTensor::zeros(r.dims()), &r).unwrap() - 1.0).abs() < 1e-15);
        let z = ComplexTensor::zeros(&[1, 8, 8]);
        assert!(matches!(nrmse(&z, &z), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn nrmse_matches_loop() {
        let mut rng = Rng::new(2);
        let p = rng.complex_tensor(&[3, 9, 7]);
        let r = rng.complex_tensor(&[3, 9, 7]);
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in p.data().iter().zip(r.data()) {
            num += (a.norm() - b.norm()).powi(2);
            den += b.norm().powi(2);
        }
        assert!((nrmse(&p, &r).unwrap() - (num / den).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn psnr_known_value_and_cap() {
        let r = real(&[1, 1, 4], &[1.0, 0.5, 0.5, 0.5]);
        let p = real(&[1, 1, 4], &[1.0, 0.5 + 0.2, 0.5 - 0.0, 0.5]);
        // mse = 0.04 / 4 = 0.01
        assert!((psnr(&p, &r).unwrap() - 20.0).abs() < 1e-10);
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&p, &real(&[1, 1, 3], &[1.0; 3])).is_err());
    }

    #[test]
    fn psnr_drops_with_noise() {
        let (x, _) = generate_phantom(4, 32, 32, &mut Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let noise = rng.complex_tensor(x.dims());
        let mut last = PSNR_CAP_DB;
        for s in [0.01, 0.03, 0.1, 0.3] {
            let mut y = x.clone();
            y.axpy(s, &noise).unwrap();
            let v = psnr(&y, &x).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ssim_identity_offset_and_window() {
        let mut rng = Rng::new(5);
        let r = rng.real_tensor(&[2, 10, 9]).map(|v| c64::new(v.re.abs() / 3.0, 0.0).min_one());
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        let shifted = r.map(|v| v + 0.5);
        assert!(ssim(&shifted, &r).unwrap() < 1.0);
        let small = ComplexTensor::zeros(&[1, 6, 9]);
        assert!(matches!(ssim(&small, &small), Err(Error::Config(_))));
    }

    #[test]
    fn ssim_matches_window_loop() {
        let mut rng = Rng::new(6);
        for dims in [[1, 7, 7], [2, 11, 9], [3, 8, 12]] {
            let p = rng.complex_tensor(&dims);
            let r = rng.complex_tensor(&dims);
            assert!((ssim(&p, &r).unwrap() - loop_ssim(&p, &r)).abs() < 1e-10);
        }
    }

    #[test]
    fn report_fields_agree() {
        let mut rng = Rng::new(7);
        let p = rng.complex_tensor(&[2, 8, 8]);
        let r = rng.complex_tensor(&[2, 8, 8]);
        let m = MetricReport::compute(&p, &r).unwrap();
        assert_eq!(m.nrmse, nrmse(&p, &r).unwrap());
        assert_eq!(m.psnr_db, psnr(&p, &r).unwrap());
        assert!((m.ssim - ssim(&p, &r).unwrap()).abs() < 1e-15);
        assert_eq!(m.ssim_frames.len(), 2);
    }

    trait MinOne {
        fn min_one(self) -> Self;
    }

    impl MinOne for c64 {
        fn min_one(self) -> Self {
            c64::new(self.re.min(1.0), 0.0)
        }
    }

    fn permute(t: &ComplexTensor, order: &[usize]) -> ComplexTensor {
        let n = t.len() / t.dims()[0];
        let mut data = Vec::with_capacity(t.len());
        for &f in order {
            data.extend_from_slice(&t.data()[f * n..(f + 1) * n]);
        }
        ComplexTensor::from_vec(t.dims(), data).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn frame_permutation_invariant(seed in 0u64..1000, shift in 1usize..3) {
            let mut rng = Rng::new(seed);
            let p = rng.complex_tensor(&[3, 8, 8]);
            let r = rng.complex_tensor(&[3, 8, 8]);
            let order: Vec<usize> = (0..3).map(|i| (i + shift) % 3).collect();
            let (pp, rp) = (permute(&p, &order), permute(&r, &order));
            prop_assert!((nrmse(&p, &r).unwrap() - nrmse(&pp, &rp).unwrap()).abs() < 1e-12);
            prop_assert!((psnr(&p, &r).unwrap() - psnr(&pp, &rp).unwrap()).abs() < 1e-9);
            prop_assert!((ssim(&p, &r).unwrap() - ssim(&pp, &rp).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ranges_hold(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let p = rng.complex_tensor(&[2, 8, 8]);
            let r = rng.complex_tensor(&[2, 8, 8]);
            let s = ssim(&p, &r).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!(nrmse(&p, &r).unwrap() >= 0.0);
        }

        #[test]
        fn nrmse_zero_iff_equal_magnitudes(seed in 0u64..1000, phase in 0.0f64..6.0) {
            let mut rng = Rng::new(seed);
            let r = rng.complex_tensor(&[1, 4, 4]);
            let rotated = r.scale_complex(c64::from_polar(1.0, phase));
            prop_assert!(nrmse(&rotated, &r).unwrap() < 1e-12);
            let mut other = r.clone();
            other.data_mut()[0] *= 1.5;
            prop_assert!(nrmse(&other, &r).unwrap() > 0.0);
        }
    }
}
