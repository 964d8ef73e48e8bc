use super::Dims;
use crate::tensor::{Backward, Real, Result, Tensor, TensorError};

struct MaxPoolOp {
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool2x2"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let mut dx = vec![T::zero(); inputs[0].len()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] = dx[src] + gv;
        }
        Ok(vec![Some(dx)])
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major window order.
pub fn maxpool2x2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = Dims::of("maxpool2x2", x)?;
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(TensorError::InvalidArgument {
            op: "maxpool2x2",
            msg: format!("spatial extents must be even, got {}x{}", d.h, d.w),
        });
    }
    let out = Dims { h: d.h / 2, w: d.w / 2, ..d };
    let data = x.data();
    let mut values = Vec::with_capacity(out.pixels() * d.c);
    let mut argmax = Vec::with_capacity(out.pixels() * d.c);
    for b in 0..d.n {
        for y in 0..out.h {
            for xx in 0..out.w {
                for c in 0..d.c {
                    let mut best = ((b * d.h + 2 * y) * d.w + 2 * xx) * d.c + c;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((b * d.h + 2 * y + dy) * d.w + 2 * xx + dx) * d.c + c;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    values.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Tensor::from_op(values, &out.shape_like(x.shape()), vec![x.clone()], MaxPoolOp { argmax })
}

struct UpsampleOp;

impl<T: Real> Backward<T> for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let d = Dims::of("upsample2x", &inputs[0])?;
        let (w2, c) = (2 * d.w, d.c);
        let mut dx = vec![T::zero(); inputs[0].len()];
        for b in 0..d.n {
            for y in 0..d.h {
                for x in 0..d.w {
                    let dst = ((b * d.h + y) * d.w + x) * c;
                    for (dy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((b * 2 * d.h + 2 * y + dy) * w2 + 2 * x + ddx) * c;
                        for k in 0..c {
                            dx[dst + k] = dx[dst + k] + g[src + k];
                        }
                    }
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Nearest-neighbour upsampling by a factor of 2 in each spatial extent.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = Dims::of("upsample2x", x)?;
    let out = Dims { h: 2 * d.h, w: 2 * d.w, ..d };
    let data = x.data();
    let mut values = Vec::with_capacity(out.pixels() * d.c);
    for b in 0..d.n {
        for y in 0..out.h {
            let row = (b * d.h + y / 2) * d.w;
            for xx in 0..out.w {
                let src = (row + xx / 2) * d.c;
                values.extend_from_slice(&data[src..src + d.c]);
            }
        }
    }
    Tensor::from_op(values, &out.shape_like(x.shape()), vec![x.clone()], UpsampleOp)
}
