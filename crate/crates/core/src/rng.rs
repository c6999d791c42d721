//! Seeded random stream for the filter.
//!
//! Each frame reads its own ChaCha stream (`stream = frame index`), so the
//! draws for a frame do not depend on how many were consumed before it, nor
//! on precision mode or worker count. All draws are `f64`; kernels convert
//! them to their own precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
}

/// The draws one frame consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDraws {
    /// `(nx, ny)` standard normals, one pair per particle.
    pub normals: Vec<(f64, f64)>,
    /// Offset of the systematic resampling grid, in `[0, 1)`.
    pub u: f64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame_rng(&self, frame: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame as u64);
        rng
    }

    pub fn frame_draws(&self, frame: usize, particles: usize) -> FrameDraws {
        let mut rng = self.frame_rng(frame);
        let normals = (0..particles)
            .map(|_| {
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                (nx, ny)
            })
            .collect();
        let u = rng.random::<f64>();
        FrameDraws { normals, u }
    }
}

/// Derives an independent seed for repeat `index` of a configuration.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
