use serde::{Deserialize, Serialize};

use super::{generate_coil_maps, generate_mask, generate_phantom, CoilMaps, EncodingOperator, SamplingMask};
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Rng};

/// Problem size: frames, matrix and coils.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub frames: usize,
    pub nx: usize,
    pub ny: usize,
    pub coils: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            frames: 8,
            nx: 32,
            ny: 32,
            coils: 4,
        }
    }
}

impl Dims {
    pub fn image(&self) -> [usize; 3] {
        [self.frames, self.nx, self.ny]
    }

    pub fn kspace(&self) -> [usize; 4] {
        [self.frames, self.coils, self.nx, self.ny]
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug)]
pub struct CineSample {
    pub reference: ComplexTensor,
    pub full_kspace: ComplexTensor,
    pub under_kspace: ComplexTensor,
    pub mask: SamplingMask,
    pub maps: CoilMaps,
    pub acceleration: f64,
}

impl CineSample {
    /// Build a sample from a reference image, maps and mask.
    pub fn from_reference(
        reference: ComplexTensor,
        maps: CoilMaps,
        mask: SamplingMask,
        acceleration: f64,
    ) -> Result<Self> {
        let op = EncodingOperator::new(maps.clone(), mask.clone())?;
        let full_kspace = op.coil_fft(&reference)?;
        let under_kspace = op.apply_mask(&full_kspace)?;
        Ok(CineSample {
            reference,
            full_kspace,
            under_kspace,
            mask,
            maps,
            acceleration,
        })
    }

    pub fn dims(&self) -> Dims {
        let k = self.full_kspace.dims();
        Dims {
            frames: k[0],
            coils: k[1],
            nx: k[2],
            ny: k[3],
        }
    }

    pub fn operator(&self) -> Result<EncodingOperator> {
        EncodingOperator::new(self.maps.clone(), self.mask.clone())
    }

    /// Same reference data under a different sampling pattern.
    pub fn with_mask(&self, mask: SamplingMask, acceleration: f64) -> Result<Self> {
        let op = EncodingOperator::new(self.maps.clone(), mask.clone())?;
        let under_kspace = op.apply_mask(&self.full_kspace)?;
        Ok(CineSample {
            reference: self.reference.clone(),
            full_kspace: self.full_kspace.clone(),
            under_kspace,
            mask,
            maps: self.maps.clone(),
            acceleration,
        })
    }

    /// `A^H y_u`.
    pub fn zero_filled(&self) -> Result<ComplexTensor> {
        self.operator()?.adjoint(&self.under_kspace)
    }
}

/// `count` phantom samples. Sample `i` draws everything from the seed
/// `base_seed + i`, with its acceleration uniform in `accel_range`.
pub fn make_dataset(
    count: usize,
    dims: Dims,
    accel_range: (f64, f64),
    center_lines: usize,
    base_seed: u64,
) -> Result<Vec<CineSample>> {
    let (lo, hi) = accel_range;
    if !(lo >= 1.0 && hi >= lo && hi <= dims.ny as f64) {
        return Err(Error::config(format!(
            "acceleration range [{lo}, {hi}] must lie within [1, {}]",
            dims.ny
        )));
    }
    let maps = generate_coil_maps(dims.coils, dims.nx, dims.ny)?;
    (0..count)
        .map(|i| {
            let mut rng = Rng::new(base_seed.wrapping_add(i as u64));
            let (reference, _) = generate_phantom(dims.frames, dims.nx, dims.ny, &mut rng)?;
            let accel = rng.uniform_range(lo, hi);
            let mask = generate_mask(dims.frames, dims.ny, accel, center_lines, &mut rng)?;
            CineSample::from_reference(reference, maps.clone(), mask, accel)
        })
        .collect()
}
