use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Gain applied to absolute error maps before clipping.
pub const ERROR_SCALE: f64 = 5.0;

/// Gray level of a value in `[0, 1]`, rounding half up; values outside the
/// range are clipped.
pub fn pgm_level(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

fn frames(t: &ComplexTensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [f, x, y] => Ok((f, x, y)),
        [x, y] => Ok((1, x, y)),
        _ => Err(Error::shape(t.dims(), &[0; 3], "figures expect (T, X, Y) or (X, Y) images")),
    }
}

/// Binary graymap with frames side by side: `X` rows, `T * Y` columns.
fn encode(t: &ComplexTensor, value: impl Fn(usize) -> f64) -> Result<Vec<u8>> {
    let (nf, nx, ny) = frames(t)?;
    let mut out = format!("P5\n{} {}\n255\n", nf * ny, nx).into_bytes();
    for x in 0..nx {
        for f in 0..nf {
            for y in 0..ny {
                out.push(pgm_level(value((f * nx + x) * ny + y)));
            }
        }
    }
    Ok(out)
}

/// Magnitude image, divided by its maximum when `normalize` is set.
pub fn magnitude_pgm(t: &ComplexTensor, normalize: bool) -> Result<Vec<u8>> {
    let scale = if normalize && t.max_abs() > 0.0 { 1.0 / t.max_abs() } else { 1.0 };
    encode(t, |i| t.data()[i].norm() * scale)
}

/// `||pred| - |ref||` times [`ERROR_SCALE`], clipped to `[0, 1]`.
pub fn error_pgm(pred: &ComplexTensor, reference: &ComplexTensor) -> Result<Vec<u8>> {
    pred.check_same_dims(reference, "error map")?;
    encode(reference, |i| ERROR_SCALE * (pred.data()[i].norm() - reference.data()[i].norm()).abs())
}
