use super::Dims;
use crate::tensor::{Backward, Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Infer,
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

/// Running statistics used at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: T,
    /// Weight of the newest batch in the exponential moving average.
    pub momentum: T,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize, eps: T, momentum: T) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], eps, momentum }
    }

    /// Folds a batch into the moving averages, using the unbiased variance.
    pub fn update(&mut self, batch: &BatchStats<T>) {
        let m = self.momentum;
        let n = T::from_usize(batch.count).expect("count fits");
        let unbias = if batch.count > 1 { n / (n - T::one()) } else { T::one() };
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
    }
}

struct BnTrainOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    channels: usize,
}

impl<T: Real> Backward<T> for BnTrainOp<T> {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let c = self.channels;
        let gamma = inputs[1].data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (gr, xr) in g.chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for j in 0..c {
                sum_g[j] = sum_g[j] + gr[j];
                sum_gx[j] = sum_gx[j] + gr[j] * xr[j];
            }
        }
        let dx = inputs[0].requires_grad().then(|| {
            let m = T::from_usize(g.len() / c).expect("count fits");
            let mut dx = vec![T::zero(); g.len()];
            for ((d, gr), xr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(self.xhat.chunks_exact(c)) {
                for j in 0..c {
                    let k = gamma[j] * self.inv_std[j] / m;
                    d[j] = k * (m * gr[j] - sum_g[j] - xr[j] * sum_gx[j]);
                }
            }
            dx
        });
        Ok(vec![
            dx,
            inputs[1].requires_grad().then_some(sum_gx),
            inputs[2].requires_grad().then_some(sum_g),
        ])
    }
}

struct BnInferOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    channels: usize,
}

impl<T: Real> Backward<T> for BnInferOp<T> {
    fn name(&self) -> &'static str {
        "batchnorm_infer"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let c = self.channels;
        let gamma = inputs[1].data();
        let dx = inputs[0].requires_grad().then(|| {
            g.chunks_exact(c)
                .flat_map(|gr| (0..c).map(move |j| gr[j] * gamma[j] * self.inv_std[j]))
                .collect()
        });
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (gr, xr) in g.chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for j in 0..c {
                dgamma[j] = dgamma[j] + gr[j] * xr[j];
                dbeta[j] = dbeta[j] + gr[j];
            }
        }
        Ok(vec![
            dx,
            inputs[1].requires_grad().then_some(dgamma),
            inputs[2].requires_grad().then_some(dbeta),
        ])
    }
}

/// Per-channel batch normalization with affine `gamma`, `beta`.
///
/// In [`BnMode::Train`] the batch statistics are returned so the caller can
/// fold them into `running`; in [`BnMode::Infer`] `running` is used as-is.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &RunningStats<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
    let dims = Dims::of("batchnorm", x)?;
    let c = dims.c;
    for p in [gamma, beta] {
        if p.shape() != [c] {
            return Err(TensorError::ShapeMismatch { op: "batchnorm", lhs: vec![c], rhs: p.shape().to_vec() });
        }
    }
    if running.mean.len() != c || running.var.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            lhs: vec![c],
            rhs: vec![running.mean.len()],
        });
    }
    let count = dims.pixels();
    let data = x.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(TensorError::InvalidArgument {
                    op: "batchnorm",
                    msg: "train mode needs at least 2 elements per channel".into(),
                });
            }
            let n = T::from_usize(count).expect("count fits");
            let mut mean = vec![T::zero(); c];
            for row in data.chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m = *m + v);
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![T::zero(); c];
            for row in data.chunks_exact(c) {
                for j in 0..c {
                    let d = row[j] - mean[j];
                    var[j] = var[j] + d * d;
                }
            }
            var.iter_mut().for_each(|v| *v = *v / n);
            (mean, var)
        }
        BnMode::Infer => (running.mean.clone(), running.var.clone()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + running.eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(data.len());
    let mut out = Vec::with_capacity(data.len());
    let (g, b) = (gamma.data(), beta.data());
    for row in data.chunks_exact(c) {
        for j in 0..c {
            let xh = (row[j] - mean[j]) * inv_std[j];
            xhat.push(xh);
            out.push(g[j] * xh + b[j]);
        }
    }
    let inputs = vec![x.clone(), gamma.clone(), beta.clone()];
    match mode {
        BnMode::Train => {
            let y = Tensor::from_op(out, x.shape(), inputs, BnTrainOp { xhat, inv_std, channels: c })?;
            Ok((y, Some(BatchStats { mean, var, count })))
        }
        BnMode::Infer => {
            let y = Tensor::from_op(out, x.shape(), inputs, BnInferOp { xhat, inv_std, channels: c })?;
            Ok((y, None))
        }
    }
}
