//! Sources of the standard-normal and uniform draws consumed by the
//! reparameterized samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Mat;

pub trait NoiseSource {
    /// Matrix of independent standard-normal draws.
    fn normal(&mut self, rows: usize, cols: usize) -> Mat;
    /// Matrix of independent uniform draws on the open interval (0, 1).
    fn uniform(&mut self, rows: usize, cols: usize) -> Mat;
}

/// Seeded pseudo-random draws.
pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent substream `stream` of `seed`; used for per-sample draws that
    /// must not depend on scheduling.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl NoiseSource for RngNoise {
    fn normal(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_shape_simple_fn((rows, cols), || self.rng.sample(StandardNormal))
    }

    fn uniform(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_shape_simple_fn((rows, cols), || {
            let u: f64 = self.rng.random();
            u.clamp(1e-12, 1.0 - 1e-12)
        })
    }
}

/// Degenerate source: normals are 0 and uniforms are 0.5. Collapses every
/// reparameterized sample to its mean and every Gumbel pair to equal values.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn normal(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::zeros((rows, cols))
    }

    fn uniform(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_elem((rows, cols), 0.5)
    }
}
