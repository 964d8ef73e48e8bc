//! High-pass first layers of the noise stream: the constrained
//! prediction-error convolution and the fixed SRM residual filters.

use rand::Rng;

use super::init::constrained_uniform;
use crate::tensor::{Real, Result, TensorError};

/// Spatial extent of constrained and SRM kernels.
pub const CONSTRAINED_KERNEL: usize = 5;

/// Off-center sums below this magnitude cannot be normalized.
pub const DEGENERATE_SUM: f64 = 1e-12;

/// Outcome of [`project_constrained`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Projection {
    /// `(input channel, filter)` pairs that were re-drawn because their
    /// off-center weights summed to (almost) zero.
    pub reinitialized: Vec<(usize, usize)>,
}

fn kernel_dims(shape: [usize; 4]) -> Result<(usize, usize, usize)> {
    let [kh, kw, cin, cout] = shape;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::InvalidArgument {
            op: "project_constrained",
            msg: format!("kernel extents must be odd, got {kh}x{kw}"),
        });
    }
    Ok((kh * kw, cin, cout))
}

/// Forces every `(ci, co)` slice of a `(kh, kw, cin, cout)` kernel to have
/// center weight -1 and off-center weights summing to 1, by rescaling the
/// off-center weights.
pub fn project_constrained<T: Real, R: Rng>(
    kernel: &mut [T],
    shape: [usize; 4],
    rng: &mut R,
) -> Result<Projection> {
    let (taps, cin, cout) = kernel_dims(shape)?;
    if kernel.len() != taps * cin * cout {
        return Err(TensorError::DataLength {
            shape: shape.to_vec(),
            expected: taps * cin * cout,
            actual: kernel.len(),
        });
    }
    let center = taps / 2;
    let idx = |tap: usize, ci: usize, co: usize| (tap * cin + ci) * cout + co;
    let mut report = Projection::default();
    for ci in 0..cin {
        for co in 0..cout {
            let mut off: f64 = (0..taps)
                .filter(|&t| t != center)
                .map(|t| kernel[idx(t, ci, co)].as_f64())
                .sum();
            while off.abs() < DEGENERATE_SUM {
                report.reinitialized.push((ci, co));
                for t in 0..taps {
                    kernel[idx(t, ci, co)] = constrained_uniform(rng);
                }
                off = (0..taps)
                    .filter(|&t| t != center)
                    .map(|t| kernel[idx(t, ci, co)].as_f64())
                    .sum();
            }
            for t in (0..taps).filter(|&t| t != center) {
                let w = &mut kernel[idx(t, ci, co)];
                *w = T::from_f64_lossy(w.as_f64() / off);
            }
            kernel[idx(center, ci, co)] = -T::one();
        }
    }
    Ok(report)
}

/// Largest violation of the constraint over all slices:
/// `max(|center + 1|, |sum(off-center) - 1|)`, accumulated in `f64`.
pub fn constraint_residual<T: Real>(kernel: &[T], shape: [usize; 4]) -> Result<f64> {
    let (taps, cin, cout) = kernel_dims(shape)?;
    let center = taps / 2;
    let idx = |tap: usize, ci: usize, co: usize| (tap * cin + ci) * cout + co;
    let mut worst = 0.0f64;
    for ci in 0..cin {
        for co in 0..cout {
            let c = kernel[idx(center, ci, co)].as_f64();
            let off: f64 = (0..taps)
                .filter(|&t| t != center)
                .map(|t| kernel[idx(t, ci, co)].as_f64())
                .sum();
            worst = worst.max((c + 1.0).abs()).max((off - 1.0).abs());
        }
    }
    Ok(worst)
}

/// The three 5x5 SRM residual kernels, in the order and normalization of the
/// RGB-N noise stream: 3x3 second-order (1/4), 5x5 "KV" square (1/12) and
/// the horizontal 1-D second difference (1/2).
pub fn srm_kernels() -> [[[f64; 5]; 5]; 3] {
    let q = 1.0 / 4.0;
    let kv = 1.0 / 12.0;
    let h = 1.0 / 2.0;
    [
        [
            [0.0; 5],
            [0.0, -q, 2.0 * q, -q, 0.0],
            [0.0, 2.0 * q, -4.0 * q, 2.0 * q, 0.0],
            [0.0, -q, 2.0 * q, -q, 0.0],
            [0.0; 5],
        ],
        [
            [-kv, 2.0 * kv, -2.0 * kv, 2.0 * kv, -kv],
            [2.0 * kv, -6.0 * kv, 8.0 * kv, -6.0 * kv, 2.0 * kv],
            [-2.0 * kv, 8.0 * kv, -12.0 * kv, 8.0 * kv, -2.0 * kv],
            [2.0 * kv, -6.0 * kv, 8.0 * kv, -6.0 * kv, 2.0 * kv],
            [-kv, 2.0 * kv, -2.0 * kv, 2.0 * kv, -kv],
        ],
        [
            [0.0; 5],
            [0.0; 5],
            [0.0, h, -2.0 * h, h, 0.0],
            [0.0; 5],
            [0.0; 5],
        ],
    ]
}

/// SRM kernels as a `(5, 5, cin, 3)` conv kernel, replicated over input channels.
pub fn srm_filter_bank<T: Real>(cin: usize) -> (Vec<T>, [usize; 4]) {
    let k = srm_kernels();
    let n = CONSTRAINED_KERNEL;
    let mut data = vec![T::zero(); n * n * cin * 3];
    for y in 0..n {
        for x in 0..n {
            for ci in 0..cin {
                for (co, kern) in k.iter().enumerate() {
                    data[((y * n + x) * cin + ci) * 3 + co] = T::from_f64_lossy(kern[y][x]);
                }
            }
        }
    }
    (data, [n, n, cin, 3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::conv2d;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: [usize; 4] = [5, 5, 1, 3];

    #[test]
    fn all_ones_filter_projects_to_uniform_neighbours() {
        let mut k = vec![1.0f64; 75];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        project_constrained(&mut k, SHAPE, &mut rng).unwrap();
        for co in 0..3 {
            for t in 0..25 {
                let v = k[t * 3 + co];
                if t == 12 {
                    assert_eq!(v, -1.0);
                } else {
                    assert!((v - 1.0 / 24.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut k: Vec<f64> = (0..75).map(|_| rng.random_range(-0.1..0.1)).collect();
            project_constrained(&mut k, SHAPE, &mut rng).unwrap();
            assert!(constraint_residual(&k, SHAPE).unwrap() < 1e-9);
            for co in 0..3 {
                assert_eq!(k[12 * 3 + co], -1.0);
            }
            let before = k.clone();
            project_constrained(&mut k, SHAPE, &mut rng).unwrap();
            for (a, b) in k.iter().zip(&before) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_filter_is_redrawn_and_reported() {
        let mut k = vec![0.0f64; 75];
        // Filter 1 keeps a usable sum; filters 0 and 2 are all zero.
        for t in 0..25 {
            k[t * 3 + 1] = 0.5;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = project_constrained(&mut k, SHAPE, &mut rng).unwrap();
        assert_eq!(report.reinitialized, vec![(0, 0), (0, 2)]);
        assert!(constraint_residual(&k, SHAPE).unwrap() < 1e-9);
    }

    #[test]
    fn srm_kernels_are_high_pass() {
        for k in srm_kernels() {
            let s: f64 = k.iter().flatten().sum();
            assert!(s.abs() < 1e-15);
        }
        let (data, shape) = srm_filter_bank::<f64>(1);
        let kernel = Tensor::new(data, &shape).unwrap();
        let x = Tensor::full(&[12, 12, 1], 0.37).unwrap();
        let y = conv2d(&x, &kernel, None).unwrap();
        // Interior pixels see the full kernel.
        for yy in 2..10 {
            for xx in 2..10 {
                for c in 0..3 {
                    assert!(y.data()[(yy * 12 + xx) * 3 + c].abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn srm_impulse_response_is_flipped_kernel() {
        let (data, shape) = srm_filter_bank::<f64>(1);
        let kernel = Tensor::new(data, &shape).unwrap();
        let mut img = vec![0.0; 81];
        img[4 * 9 + 4] = 1.0;
        let y = conv2d(&Tensor::new(img, &[9, 9, 1]).unwrap(), &kernel, None).unwrap();
        let k = srm_kernels();
        for dy in 0..5 {
            for dx in 0..5 {
                for c in 0..3 {
                    let out = y.data()[((2 + dy) * 9 + 2 + dx) * 3 + c];
                    assert!((out - k[c][4 - dy][4 - dx]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn srm_is_translation_equivariant_in_the_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img: Vec<f64> = (0..14 * 14).map(|_| rng.random()).collect();
        let (data, shape) = srm_filter_bank::<f64>(1);
        let kernel = Tensor::new(data, &shape).unwrap();
        let y = conv2d(&Tensor::new(img.clone(), &[14, 14, 1]).unwrap(), &kernel, None).unwrap();
        // Shift right by 1 column.
        let mut shifted = vec![0.0; 14 * 14];
        for r in 0..14 {
            for c in 1..14 {
                shifted[r * 14 + c] = img[r * 14 + c - 1];
            }
        }
        let ys = conv2d(&Tensor::new(shifted, &[14, 14, 1]).unwrap(), &kernel, None).unwrap();
        for r in 2..12 {
            for c in 3..12 {
                for k in 0..3 {
                    let a = y.data()[(r * 14 + c - 1) * 3 + k];
                    let b = ys.data()[(r * 14 + c) * 3 + k];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
