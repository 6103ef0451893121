//! Dense complex tensors, the centered unitary FFT, recorded elementwise ops
//! with hand-written backward passes, and the seeded generator.

mod complex_tensor;
mod fft;
mod record;
mod rng;

pub use complex_tensor::{c64, ComplexTensor, ElementwiseKind};
pub use fft::{fft2_centered, ifft2_centered};
pub use record::{record, GradPair, OpKind, OpRecord};
pub use rng::Rng;
