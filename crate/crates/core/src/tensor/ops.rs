//! Elementwise and structural primitives.

use super::autograd::Backward;
use super::{numel, Real, Result, Tensor, TensorError};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

struct AddOp;
impl<T: Real> Backward<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec()), Some(g.to_vec())])
    }
}

struct SubOp;
impl<T: Real> Backward<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())])
    }
}

struct MulOp;
impl<T: Real> Backward<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, x: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (a, b) = (x[0].data(), x[1].data());
        Ok(vec![
            x[0].requires_grad().then(|| zip_map(g, b, |g, b| g * b)),
            x[1].requires_grad().then(|| zip_map(g, a, |g, a| g * a)),
        ])
    }
}

struct DivOp;
impl<T: Real> Backward<T> for DivOp {
    fn name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, x: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let b = x[1].data();
        let q = out.data();
        Ok(vec![
            x[0].requires_grad().then(|| zip_map(g, b, |g, b| g / b)),
            x[1].requires_grad()
                .then(|| g.iter().zip(b).zip(q).map(|((&g, &b), &q)| -g * q / b).collect()),
        ])
    }
}

struct ScaleOp<T>(T);
impl<T: Real> Backward<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.iter().map(|&v| v * self.0).collect())])
    }
}

struct AddScalarOp;
impl<T: Real> Backward<T> for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec())])
    }
}

struct SumOp;
impl<T: Real> Backward<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, x: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(vec![g[0]; x[0].len()])])
    }
}

struct LogOp;
impl<T: Real> Backward<T> for LogOp {
    fn name(&self) -> &'static str {
        "log"
    }
    fn backward(&self, x: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(zip_map(g, x[0].data(), |g, x| g / x))])
    }
}

struct SigmoidOp;
impl<T: Real> Backward<T> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(zip_map(g, out.data(), |g, s| g * s * (T::one() - s)))])
    }
}

struct ReluOp;
impl<T: Real> Backward<T> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, x: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(zip_map(g, x[0].data(), |g, x| if x > T::zero() { g } else { T::zero() }))])
    }
}

struct ClampOp<T> {
    lo: T,
    hi: T,
}
impl<T: Real> Backward<T> for ClampOp<T> {
    fn name(&self) -> &'static str {
        "clamp"
    }
    fn backward(&self, x: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (lo, hi) = (self.lo, self.hi);
        Ok(vec![Some(zip_map(g, x[0].data(), |g, x| {
            if x >= lo && x <= hi {
                g
            } else {
                T::zero()
            }
        }))])
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

struct ConcatOp {
    axis: usize,
    extents: Vec<usize>,
}
impl<T: Real> Backward<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, x: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (outer, total, inner) = axis_split(out.shape(), self.axis);
        let mut offset = 0;
        let mut grads = Vec::with_capacity(x.len());
        for (t, &ext) in x.iter().zip(&self.extents) {
            if t.requires_grad() {
                let mut gi = Vec::with_capacity(t.len());
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gi.extend_from_slice(&g[start..start + ext * inner]);
                }
                grads.push(Some(gi));
            } else {
                grads.push(None);
            }
            offset += ext;
        }
        Ok(grads)
    }
}

struct SliceOp {
    axis: usize,
    start: usize,
}
impl<T: Real> Backward<T> for SliceOp {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn backward(&self, x: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (outer, full, inner) = axis_split(x[0].shape(), self.axis);
        let len = out.shape()[self.axis];
        let mut gi = vec![T::zero(); x[0].len()];
        for o in 0..outer {
            let dst = (o * full + self.start) * inner;
            let src = o * len * inner;
            gi[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
        }
        Ok(vec![Some(gi)])
    }
}

struct ReshapeOp;
impl<T: Real> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec())])
    }
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = zip_map(self.data(), other.data(), |a, b| a + b);
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], AddOp)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = zip_map(self.data(), other.data(), |a, b| a - b);
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], SubOp)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = zip_map(self.data(), other.data(), |a, b| a * b);
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], MulOp)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, other)?;
        let data = zip_map(self.data(), other.data(), |a, b| a / b);
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], DivOp)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, s: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], ScaleOp(s))
    }

    pub fn add_scalar(&self, s: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v + s).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], AddScalarOp)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], &[], vec![self.clone()], SumOp)
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = T::from_usize(self.len()).expect("length fits the real type");
        self.sum()?.scale(T::one() / n)
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some(&bad) = self.data().iter().find(|&&v| v <= T::zero()) {
            return Err(TensorError::LogDomain(bad.as_f64()));
        }
        let data = self.data().iter().map(|v| v.ln()).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], LogOp)
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| sigmoid(v)).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], SigmoidOp)
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v.max(T::zero())).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], ReluOp)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside the range.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Tensor<T>> {
        if !(lo <= hi) {
            return Err(TensorError::InvalidArgument {
                op: "clamp",
                msg: format!("empty range [{lo}, {hi}]"),
            });
        }
        let data = self.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], ClampOp { lo, hi })
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            msg: "no tensors to join".into(),
        })?;
        if axis >= first.rank() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", first.rank()),
            });
        }
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let mut shape = first.shape().to_vec();
        shape[axis] = extents.iter().sum();
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (p, &ext) in parts.iter().zip(&extents) {
                let start = o * ext * inner;
                data.extend_from_slice(&p.data()[start..start + ext * inner]);
            }
        }
        let inputs = parts.iter().map(|&p| p.clone()).collect();
        Tensor::from_op(data, &shape, inputs, ConcatOp { axis, extents })
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of {:?}", start + len, self.shape()),
            });
        }
        let (outer, full, inner) = axis_split(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[s..s + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(data, &shape, vec![self.clone()], SliceOp { axis, start })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(self.to_vec(), shape, vec![self.clone()], ReshapeOp)
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::new(data, shape).unwrap()
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(Tensor::scalar(0.0f64).sigmoid().unwrap().item().unwrap(), 0.5);
        assert_eq!(Tensor::<f64>::ones(&[4]).unwrap().sum().unwrap().item().unwrap(), 4.0);
        assert_eq!(t(vec![1.0, 2.0, 3.0, 6.0], &[4]).mean().unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn channel_concat_doubles_channels() {
        let a = Tensor::<f64>::zeros(&[2, 2, 32]).unwrap();
        let b = Tensor::<f64>::ones(&[2, 2, 32]).unwrap();
        let c = Tensor::concat(&[&a, &b], 2).unwrap();
        assert_eq!(c.shape(), &[2, 2, 64]);
        assert_eq!(c.data()[31], 0.0);
        assert_eq!(c.data()[32], 1.0);
        assert_eq!(c.data()[64], 0.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[3, 2]).unwrap();
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { op: "add", .. })));
        assert!(matches!(Tensor::concat(&[&a, &b], 1), Err(TensorError::ShapeMismatch { .. })));
        assert!(a.reshape(&[5]).is_err());
        assert!(a.slice(1, 2, 2).is_err());
    }

    #[test]
    fn log_domain_error() {
        assert_eq!(t(vec![1.0, 0.0], &[2]).log().unwrap_err(), TensorError::LogDomain(0.0));
        assert!(t(vec![-1.0], &[1]).log().is_err());
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let a = t(vec![1.0], &[1]);
        let z = t(vec![0.0], &[1]);
        assert!(matches!(a.div(&z), Err(TensorError::NonFinite { op: "div" })));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let s = t(vec![-800.0, 800.0], &[2]).sigmoid().unwrap();
        assert_eq!(s.data(), &[0.0, 1.0]);
    }

    #[test]
    fn gradient_of_sum_of_graphs_is_sum_of_gradients() {
        let x = Tensor::leaf(vec![0.4, -1.3, 2.2], &[3], true).unwrap();
        let f = |x: &Tensor<f64>| x.mul(x).unwrap().sigmoid().unwrap().sum().unwrap();
        let g = |x: &Tensor<f64>| x.scale(3.0).unwrap().relu().unwrap().sum().unwrap();
        f(&x).backward().unwrap();
        let gf = x.grad().unwrap().to_vec();
        x.zero_grad();
        g(&x).backward().unwrap();
        let gg = x.grad().unwrap().to_vec();
        x.zero_grad();
        f(&x).add(&g(&x)).unwrap().backward().unwrap();
        for ((a, b), c) in gf.iter().zip(&gg).zip(x.grad().unwrap().data()) {
            assert!((a + b - c).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn reshape_and_slice_round_trip(
            data in prop::collection::vec(-1e6f64..1e6, 24),
            cut in 1usize..4,
        ) {
            let x = t(data.clone(), &[2, 3, 4]);
            let r = x.reshape(&[6, 4]).unwrap().reshape(&[2, 3, 4]).unwrap();
            prop_assert_eq!(r.data(), x.data());
            let a = x.slice(2, 0, cut).unwrap();
            let b = x.slice(2, cut, 4 - cut).unwrap();
            let joined = Tensor::concat(&[&a, &b], 2).unwrap();
            prop_assert_eq!(joined.data(), x.data());
        }
    }
}
