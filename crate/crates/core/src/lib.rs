pub mod consistency;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mri;
pub mod network;
pub mod nn;
pub mod subnet;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
