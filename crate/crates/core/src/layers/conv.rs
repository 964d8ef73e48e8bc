use super::Dims;
use crate::tensor::{gemm, Backward, MatRef, Real, Result, Tensor, TensorError, NARROW_MAX};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    input: Dims,
    kh: usize,
    kw: usize,
    cout: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.input.c
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    /// Few channels on both sides: accumulate per kernel tap straight from the
    /// input rows instead of materializing patch columns.
    fn is_direct(&self) -> bool {
        !self.is_pointwise() && self.input.c <= NARROW_MAX && self.cout <= NARROW_MAX
    }

    /// Calls `f(tap, src_offset, dst_offset, len)` for every run of output pixels
    /// in one image row that a kernel tap reads from a single input row.
    /// Offsets count pixels, not elements.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let Dims { n, h, w, .. } = self.input;
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for b in 0..n {
            for y in 0..h {
                for ky in 0..self.kh {
                    let Some(iy) = (y + ky).checked_sub(ph).filter(|&iy| iy < h) else {
                        continue;
                    };
                    for kx in 0..self.kw {
                        let x0 = pw.saturating_sub(kx);
                        let x1 = (w + pw).saturating_sub(kx).min(w);
                        if x0 >= x1 {
                            continue;
                        }
                        let src = (b * h + iy) * w + x0 + kx - pw;
                        let dst = (b * h + y) * w + x0;
                        f(ky * self.kw + kx, src, dst, x1 - x0);
                    }
                }
            }
        }
    }
}

fn direct_forward<T: Real>(x: &[T], kernel: &[T], g: &Geometry, out: &mut [T]) {
    let (cin, cout) = (g.input.c, g.cout);
    g.for_each_run(|tap, src, dst, len| {
        let taps = &kernel[tap * cin * cout..(tap + 1) * cin * cout];
        gemm(
            MatRef::new(&x[src * cin..(src + len) * cin], len, cin),
            MatRef::new(taps, cin, cout),
            T::one(),
            &mut out[dst * cout..(dst + len) * cout],
        );
    });
}

fn direct_grad_input<T: Real>(grad: &[T], kernel: &[T], g: &Geometry) -> Vec<T> {
    let (cin, cout) = (g.input.c, g.cout);
    let mut transposed = vec![T::zero(); kernel.len()];
    for (tap, block) in kernel.chunks_exact(cin * cout).enumerate() {
        for ci in 0..cin {
            for co in 0..cout {
                transposed[tap * cin * cout + co * cin + ci] = block[ci * cout + co];
            }
        }
    }
    let mut dx = vec![T::zero(); g.input.pixels() * cin];
    g.for_each_run(|tap, src, dst, len| {
        gemm(
            MatRef::new(&grad[dst * cout..(dst + len) * cout], len, cout),
            MatRef::new(&transposed[tap * cin * cout..(tap + 1) * cin * cout], cout, cin),
            T::one(),
            &mut dx[src * cin..(src + len) * cin],
        );
    });
    dx
}

fn direct_grad_kernel<T: Real>(x: &[T], grad: &[T], g: &Geometry) -> Vec<T> {
    let (cin, cout) = (g.input.c, g.cout);
    let mut dk = vec![T::zero(); g.patch() * cout];
    g.for_each_run(|tap, src, dst, len| {
        gemm(
            MatRef::new(&x[src * cin..(src + len) * cin], len, cin).t(),
            MatRef::new(&grad[dst * cout..(dst + len) * cout], len, cout),
            T::one(),
            &mut dk[tap * cin * cout..(tap + 1) * cin * cout],
        );
    });
    dk
}

/// Unrolls "same"-padded patches into rows of `(ky, kx, ci)` columns.
fn im2col<T: Real>(x: &[T], g: &Geometry) -> Vec<T> {
    let Dims { n, h, w, c } = g.input;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let patch = g.patch();
    let mut cols = vec![T::zero(); n * h * w * patch];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * patch;
                for ky in 0..g.kh {
                    let iy = y as isize + ky as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = xx as isize + kx as isize - pw;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * g.kw + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<T: Real>(cols: &[T], g: &Geometry) -> Vec<T> {
    let Dims { n, h, w, c } = g.input;
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let patch = g.patch();
    let mut dx = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * patch;
                for ky in 0..g.kh {
                    let iy = y as isize + ky as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = xx as isize + kx as isize - pw;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * g.kw + kx) * c;
                        dx[dst..dst + c]
                            .iter_mut()
                            .zip(&cols[src..src + c])
                            .for_each(|(d, &s)| *d = *d + s);
                    }
                }
            }
        }
    }
    dx
}

struct Conv2dOp<T> {
    geom: Geometry,
    /// Unrolled input; `None` for 1x1 kernels, whose columns are the input
    /// itself, and for the direct path.
    cols: Option<Vec<T>>,
}

impl<T: Real> Backward<T> for Conv2dOp<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let g = &self.geom;
        let (rows, patch) = (g.input.pixels(), g.patch());
        let dout = MatRef::new(grad, rows, g.cout);
        if g.is_direct() {
            let dx = inputs[0].requires_grad().then(|| direct_grad_input(grad, inputs[1].data(), g));
            let dk = inputs[1].requires_grad().then(|| direct_grad_kernel(inputs[0].data(), grad, g));
            let mut out = vec![dx, dk];
            out.extend(inputs.get(2).map(|b| b.requires_grad().then(|| bias_grad(grad, g.cout))));
            return Ok(out);
        }
        let cols = self.cols.as_deref().unwrap_or(inputs[0].data());
        let dx = inputs[0].requires_grad().then(|| {
            let mut dcols = vec![T::zero(); rows * patch];
            gemm(dout, MatRef::new(inputs[1].data(), patch, g.cout).t(), T::zero(), &mut dcols);
            if g.is_pointwise() {
                dcols
            } else {
                col2im(&dcols, g)
            }
        });
        let dk = inputs[1].requires_grad().then(|| {
            let mut dk = vec![T::zero(); patch * g.cout];
            gemm(MatRef::new(cols, rows, patch).t(), dout, T::zero(), &mut dk);
            dk
        });
        let mut out = vec![dx, dk];
        out.extend(inputs.get(2).map(|b| b.requires_grad().then(|| bias_grad(grad, g.cout))));
        Ok(out)
    }
}

fn bias_grad<T: Real>(grad: &[T], cout: usize) -> Vec<T> {
    let mut db = vec![T::zero(); cout];
    for row in grad.chunks_exact(cout) {
        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
    }
    db
}

/// Stride-1 "same" cross-correlation.
///
/// `x` is `(h, w, cin)` or `(n, h, w, cin)`; `kernel` is `(kh, kw, cin, cout)`
/// with odd spatial extents; `bias` is `(cout)`.
pub fn conv2d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let input = Dims::of("conv2d", x)?;
    let &[kh, kw, cin, cout] = kernel.shape() else {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            msg: format!("kernel must be (kh, kw, cin, cout), got {:?}", kernel.shape()),
        });
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            msg: format!("kernel extents must be odd, got {kh}x{kw}"),
        });
    }
    if cin != input.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![cout],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let geom = Geometry { input, kh, kw, cout };
    let rows = input.pixels();
    let cols = (!geom.is_pointwise() && !geom.is_direct()).then(|| im2col(x.data(), &geom));
    let mut out = vec![T::zero(); rows * cout];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b.data());
        }
    }
    if geom.is_direct() {
        direct_forward(x.data(), kernel.data(), &geom, &mut out);
    } else {
        let a = MatRef::new(cols.as_deref().unwrap_or(x.data()), rows, geom.patch());
        gemm(a, MatRef::new(kernel.data(), geom.patch(), cout), T::one(), &mut out);
    }

    let shape = Dims { c: cout, ..input }.shape_like(x.shape());
    let mut inputs = vec![x.clone(), kernel.clone()];
    inputs.extend(bias.cloned());
    let records = inputs.iter().any(Tensor::requires_grad);
    let op = Conv2dOp { geom, cols: if records { cols } else { None } };
    Tensor::from_op(out, &shape, inputs, op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation with zero padding.
    fn reference(x: &[f64], (n, h, w, cin): (usize, usize, usize, usize), k: &[f64], (kh, kw, cout): (usize, usize, usize), b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n * h * w * cout];
        for bi in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    for co in 0..cout {
                        let mut acc = b[co];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as i64 + ky as i64 - (kh / 2) as i64;
                                let ix = xx as i64 + kx as i64 - (kw / 2) as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x[((bi * h + iy as usize) * w + ix as usize) * cin + ci];
                                    acc += xv * k[((ky * kw + kx) * cin + ci) * cout + co];
                                }
                            }
                        }
                        out[((bi * h + y) * w + xx) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_pointwise_kernel() {
        let x = Tensor::new((0..12).map(f64::from).collect(), &[2, 2, 3]).unwrap();
        let mut k = vec![0.0; 9];
        for c in 0..3 {
            k[c * 3 + c] = 1.0;
        }
        let k = Tensor::new(k, &[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &k, Some(&Tensor::zeros(&[3]).unwrap())).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let x = Tensor::full(&[5, 5, 1], 0.75f64).unwrap();
        let k = Tensor::ones(&[3, 3, 1, 1]).unwrap();
        let y = conv2d(&x, &k, None).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0 * 0.75);
        assert_eq!(y.data()[0], 4.0 * 0.75);
    }

    #[test]
    fn five_by_five_case_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (xv, kv, bv) = (rand_vec(&mut rng, 6 * 7 * 2), rand_vec(&mut rng, 5 * 5 * 2 * 3), rand_vec(&mut rng, 3));
        let x = Tensor::new(xv.clone(), &[6, 7, 2]).unwrap();
        let k = Tensor::new(kv.clone(), &[5, 5, 2, 3]).unwrap();
        let b = Tensor::new(bv.clone(), &[3]).unwrap();
        let y = conv2d(&x, &k, Some(&b)).unwrap();
        let want = reference(&xv, (1, 6, 7, 2), &kv, (5, 5, 3), &bv);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_reference_on_200_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for _ in 0..200 {
            let n = rng.random_range(1..3);
            let h = rng.random_range(1..7);
            let w = rng.random_range(1..7);
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let kh = [1, 3, 5][rng.random_range(0..3)];
            let kw = [1, 3, 5][rng.random_range(0..3)];
            let xv = rand_vec(&mut rng, n * h * w * cin);
            let kv = rand_vec(&mut rng, kh * kw * cin * cout);
            let bv = rand_vec(&mut rng, cout);
            let y = conv2d(
                &Tensor::new(xv.clone(), &[n, h, w, cin]).unwrap(),
                &Tensor::new(kv.clone(), &[kh, kw, cin, cout]).unwrap(),
                Some(&Tensor::new(bv.clone(), &[cout]).unwrap()),
            )
            .unwrap();
            let want = reference(&xv, (n, h, w, cin), &kv, (kh, kw, cout), &bv);
            let err = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f64>::zeros(&[4, 4, 2]).unwrap();
        let k = Tensor::zeros(&[3, 3, 3, 1]).unwrap();
        assert!(matches!(conv2d(&x, &k, None), Err(TensorError::ShapeMismatch { .. })));
        let even = Tensor::zeros(&[2, 2, 2, 1]).unwrap();
        assert!(conv2d(&x, &even, None).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::new(rand_vec(&mut rng, 2 * 5 * 4 * 2), &[2, 5, 4, 2]).unwrap();
        let k = Tensor::new(rand_vec(&mut rng, 3 * 3 * 2 * 3), &[3, 3, 2, 3]).unwrap();
        let b = Tensor::new(rand_vec(&mut rng, 3), &[3]).unwrap();
        // Weight the output so the reduction is not symmetric.
        let wts = Tensor::new(rand_vec(&mut rng, 2 * 5 * 4 * 3), &[2, 5, 4, 3]).unwrap();
        let ex = finite_diff_check(|x| conv2d(x, &k, Some(&b))?.mul(&wts), &x, 1e-5).unwrap();
        let ek = finite_diff_check(|k| conv2d(&x, k, Some(&b))?.mul(&wts), &k, 1e-5).unwrap();
        let eb = finite_diff_check(|b| conv2d(&x, &k, Some(b))?.mul(&wts), &b, 1e-5).unwrap();
        assert!(ex < 1e-4 && ek < 1e-4 && eb < 1e-4, "{ex} {ek} {eb}");
        let k1 = Tensor::new(rand_vec(&mut rng, 2 * 3), &[1, 1, 2, 3]).unwrap();
        let e1 = finite_diff_check(|x| conv2d(x, &k1, None)?.mul(&wts), &x, 1e-5).unwrap();
        assert!(e1 < 1e-4, "{e1}");
    }
}
