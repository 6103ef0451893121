use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{c64, ComplexTensor};

/// Normalization of the k-space term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNorm {
    /// Each term divided by its own element count.
    #[default]
    PerTerm,
    /// Both terms divided by the number of image pixels.
    ImagePixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub image: f64,
    pub kspace: f64,
    pub total: f64,
}

fn l1(pred: &ComplexTensor, target: &ComplexTensor, count: f64) -> Result<(f64, ComplexTensor)> {
    let d = pred.sub(target)?;
    let sum: f64 = d.data().iter().map(|v| v.norm()).sum();
    let grad = d.map(|v| {
        let m = v.norm();
        if m == 0.0 {
            c64::new(0.0, 0.0)
        } else {
            v / (m * count)
        }
    });
    Ok((sum / count, grad))
}

/// Mean absolute error of image and k-space with the cotangents of both
/// predictions. The subgradient at a zero residual is zero.
pub fn loss_with_grad(
    x: &ComplexTensor,
    y: &ComplexTensor,
    ref_x: &ComplexTensor,
    ref_y: &ComplexTensor,
    norm: LossNorm,
) -> Result<(LossReport, ComplexTensor, ComplexTensor)> {
    let px = x.len().max(1) as f64;
    let py = match norm {
        LossNorm::PerTerm => y.len().max(1) as f64,
        LossNorm::ImagePixels => px,
    };
    let (image, gx) = l1(x, ref_x, px)?;
    let (kspace, gy) = l1(y, ref_y, py)?;
    Ok((
        LossReport {
            image,
            kspace,
            total: image + kspace,
        },
        gx,
        gy,
    ))
}

pub fn loss(
    x: &ComplexTensor,
    y: &ComplexTensor,
    ref_x: &ComplexTensor,
    ref_y: &ComplexTensor,
    norm: LossNorm,
) -> Result<LossReport> {
    Ok(loss_with_grad(x, y, ref_x, ref_y, norm)?.0)
}
