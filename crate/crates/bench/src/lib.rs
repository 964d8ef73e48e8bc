//! Deterministic inputs shared by the benchmarks.

use forgeloc::data::{generate_sample, GenConfig, Sample};
use forgeloc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tensor of the given shape with entries uniform in `[-1, 1)`.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(data, shape).expect("shape matches data")
}

/// Gradient-tracking variant of [`uniform`].
pub fn uniform_leaf(shape: &[usize], seed: u64) -> Tensor<f32> {
    let t = uniform(shape, seed);
    Tensor::leaf(t.data().to_vec(), shape, true).expect("shape matches data")
}

/// `count` synthetic forgeries of `size x size`.
pub fn samples(count: usize, size: usize) -> Vec<Sample> {
    let cfg = GenConfig { size: [size, size], ..GenConfig::default() };
    (0..count as u64).map(|seed| generate_sample(seed, &cfg).expect("default generator config")).collect()
}

/// Probability scores with a matching binary label vector of length `n`.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.2))).collect();
    let scores = labels.iter().map(|&l| (rng.random::<f64>() + 0.5 * f64::from(l)).min(1.0)).collect();
    (scores, labels)
}
