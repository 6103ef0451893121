use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_toml, read_tensor, read_text, to_toml, write_bytes, write_tensor, DType};
use crate::error::{Error, Result};
use crate::mri::{CineSample, CoilMaps, Dims, SamplingMask};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleMeta {
    acceleration: f64,
    dims: Dims,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    count: usize,
    dims: Dims,
}

/// Writes `reference`, `maps`, `mask` and `kspace` (the undersampled data)
/// tensors plus a `sample.toml` into `dir`.
pub fn save_sample(dir: &Path, s: &CineSample) -> Result<()> {
    write_tensor(&dir.join("reference.ctns"), &s.reference, DType::Complex64)?;
    write_tensor(&dir.join("maps.ctns"), s.maps.tensor(), DType::Complex64)?;
    write_tensor(&dir.join("mask.ctns"), &s.mask.to_tensor(), DType::Complex64)?;
    write_tensor(&dir.join("kspace.ctns"), &s.under_kspace, DType::Complex64)?;
    let meta = SampleMeta {
        acceleration: s.acceleration,
        dims: s.dims(),
    };
    write_bytes(&dir.join("sample.toml"), to_toml(&meta)?.as_bytes())
}

/// Rebuilds a sample from its reference, maps and mask. The stored k-space
/// must match the one implied by them.
pub fn load_sample(dir: &Path) -> Result<CineSample> {
    let meta_path = dir.join("sample.toml");
    let meta: SampleMeta = parse_toml(&meta_path, &read_text(&meta_path)?)?;
    let maps = CoilMaps::new(read_tensor(&dir.join("maps.ctns"))?)?;
    let mask = SamplingMask::from_tensor(&read_tensor(&dir.join("mask.ctns"))?)?;
    let s = CineSample::from_reference(read_tensor(&dir.join("reference.ctns"))?, maps, mask, meta.acceleration)?;
    if s.dims() != meta.dims {
        return Err(Error::shape(&s.dims().kspace(), &meta.dims.kspace(), format!("sample {}", dir.display())));
    }
    let kpath = dir.join("kspace.ctns");
    if read_tensor(&kpath)? != s.under_kspace {
        return Err(Error::Format {
            path: kpath,
            offset: 0,
            message: "k-space does not match reference, maps and mask".into(),
        });
    }
    Ok(s)
}

pub fn save_dataset(dir: &Path, samples: &[CineSample]) -> Result<()> {
    let dims = samples
        .first()
        .map(|s| s.dims())
        .ok_or_else(|| Error::config("cannot save an empty dataset"))?;
    for (i, s) in samples.iter().enumerate() {
        save_sample(&dir.join(format!("sample_{i:04}")), s)?;
    }
    let meta = DatasetMeta {
        count: samples.len(),
        dims,
    };
    write_bytes(&dir.join("dataset.toml"), to_toml(&meta)?.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<CineSample>> {
    let meta_path = dir.join("dataset.toml");
    let meta: DatasetMeta = parse_toml(&meta_path, &read_text(&meta_path)?)?;
    (0..meta.count)
        .map(|i| {
            let s = load_sample(&dir.join(format!("sample_{i:04}")))?;
            if s.dims() != meta.dims {
                return Err(Error::shape(&s.dims().kspace(), &meta.dims.kspace(), "dataset sample"));
            }
            Ok(s)
        })
        .collect()
}
