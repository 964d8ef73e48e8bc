use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type a [`Tensor`](super::Tensor) can hold.
///
/// Gradient checks run in `f64`; training defaults to `f32`.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Short type name, used in diagnostics.
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` for strided `a` (m x k) and `b` (k x n),
    /// `c` row-major with row stride `n`.
    ///
    /// # Safety
    ///
    /// Every strided access within the stated extents must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

/// Borrowed row-major matrix, optionally viewed transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a, T: Real> MatRef<'a, T> {
    pub(crate) fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self { data, rows, cols, transposed: false }
    }

    pub(crate) fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c`, with `c` row-major.
pub(crate) fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(c.len(), m * n, "output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    if n <= NARROW_MAX && !b.transposed {
        narrow_dispatch(a, b.data, beta, c, n);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents and buffer lengths were checked against the strides above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
        );
    }
}

/// Outputs at most this wide skip the packed GEMM; the blocked kernels are
/// poorly utilized when a convolution has only a handful of output channels.
pub(crate) const NARROW_MAX: usize = 16;

fn narrow_dispatch<T: Real>(a: MatRef<'_, T>, b: &[T], beta: T, c: &mut [T], n: usize) {
    macro_rules! go {
        ($($w:literal)*) => {
            match n {
                $($w => narrow::<T, $w>(a, b, beta, c),)*
                _ => unreachable!("narrow width {n}"),
            }
        };
    }
    go!(1 2 3 4 5 6 7 8 9 10 11 12 13 14 15 16)
}

fn narrow<T: Real, const N: usize>(a: MatRef<'_, T>, b: &[T], beta: T, c: &mut [T]) {
    let (b, _) = b.as_chunks::<N>();
    if beta == T::zero() {
        c.fill(T::zero());
    } else if beta != T::one() {
        c.iter_mut().for_each(|v| *v = *v * beta);
    }
    if a.transposed {
        // a is stored k x m; walk it in row blocks that stay cache resident,
        // reducing each output row in registers.
        const BLOCK: usize = 64;
        let m = a.cols;
        let (crows, _) = c.as_chunks_mut::<N>();
        for (ablock, bblock) in a.data.chunks(BLOCK * m).zip(b.chunks(BLOCK)) {
            for (p, crow) in crows.iter_mut().enumerate() {
                let mut acc = [T::zero(); N];
                for (arow, bp) in ablock.chunks_exact(m).zip(bblock) {
                    let av = arow[p];
                    for j in 0..N {
                        acc[j] = acc[j] + av * bp[j];
                    }
                }
                for j in 0..N {
                    crow[j] = crow[j] + acc[j];
                }
            }
        }
    } else {
        let k = a.cols;
        let (crows, _) = c.as_chunks_mut::<N>();
        for (arow, crow) in a.data.chunks_exact(k).zip(crows) {
            let mut acc = [T::zero(); N];
            for (&av, bp) in arow.iter().zip(b) {
                for j in 0..N {
                    acc[j] = acc[j] + av * bp[j];
                }
            }
            for j in 0..N {
                crow[j] = crow[j] + acc[j];
            }
        }
    }
}
