//! Imaging physics and synthetic data.
//!
//! Axis orders are fixed crate-wide:
//! - cine image: (time, x, y)
//! - k-space: (time, coil, kx, ky)
//! - sampling mask: (time, ky), broadcast along kx and coil
//! - coil maps: (coil, x, y)

mod coils;
mod dataset;
mod encoding;
mod mask;
mod phantom;

pub use coils::{generate_coil_maps, CoilMaps};
pub use dataset::{make_dataset, CineSample, Dims};
pub use encoding::{EncodingOperator, KSPACE_AXES};
pub use mask::{generate_mask, SamplingMask};
pub use phantom::{dynamic_region, generate_phantom, PhantomGeometry};
