//! Seeded random streams.
//!
//! Every randomized routine draws from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! whose output is fixed by its reference specification and does not depend
//! on platform word size or endianness. A `(seed, stream)` pair selects an
//! independent keystream, which lets parallel workers reproduce the exact
//! values a serial run would see.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Stream 0 of `seed`.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sign(rng: &mut Rng) -> f64 {
    if rand::Rng::random::<bool>(rng) {
        1.0
    } else {
        -1.0
    }
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rand::Rng::random::<f64>(rng)
}

/// Uniform point on the sphere of radius `radius` in `dim` dimensions.
pub fn sphere_point(rng: &mut Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}
