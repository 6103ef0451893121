use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{c64, ComplexTensor};

/// Seeded generator. ChaCha is counter-based and its output stream is
/// fixed across platforms for a given seed.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Circular complex Gaussian with E|z|^2 = 1.
    pub fn complex_normal(&mut self) -> c64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        c64::new(self.normal() * s, self.normal() * s)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    pub fn complex_tensor(&mut self, dims: &[usize]) -> ComplexTensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| self.complex_normal()).collect();
        ComplexTensor::from_vec(dims, data).expect("count matches dims")
    }

    pub fn real_tensor(&mut self, dims: &[usize]) -> ComplexTensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| c64::new(self.normal(), 0.0)).collect();
        ComplexTensor::from_vec(dims, data).expect("count matches dims")
    }
}
