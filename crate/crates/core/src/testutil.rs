//! Helpers shared by the unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{SequenceND, Shape};

/// Standard normal sample by Box-Muller.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_input(dims: &[usize], width: usize, rng: &mut ChaCha8Rng) -> SequenceND {
    let shape = Shape::new(dims).unwrap();
    let vals = (0..shape.point_count() * width)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    SequenceND::new(shape, width, vals).unwrap()
}

pub use crate::gradcheck::relative_error as rel_err;
