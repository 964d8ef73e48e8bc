use rand::Rng;

use crate::tensor::Real;

/// Half-width of the uniform draw for constrained filters before projection.
pub const CONSTRAINED_INIT_BOUND: f64 = 0.1;

/// Kaiming-uniform (ReLU gain) draw: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Real, R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect()
}

pub fn constrained_uniform<T: Real, R: Rng>(rng: &mut R) -> T {
    T::from_f64_lossy(rng.random_range(-CONSTRAINED_INIT_BOUND..CONSTRAINED_INIT_BOUND))
}
