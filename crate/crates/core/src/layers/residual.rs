use super::{batchnorm, conv2d, BatchStats, BnMode, Dims, RunningStats};
use crate::tensor::{Real, Result, Tensor, TensorError};

/// Batch-norm mode plus the batch statistics gathered during one forward pass.
#[derive(Debug)]
pub struct LayerCtx<T> {
    pub mode: BnMode,
    /// `(batch-norm id, statistics)` in evaluation order; empty in infer mode.
    pub updates: Vec<(usize, BatchStats<T>)>,
}

impl<T> LayerCtx<T> {
    pub fn new(mode: BnMode) -> Self {
        Self { mode, updates: Vec::new() }
    }
}

/// A convolution followed by batch normalization.
#[derive(Debug, Clone)]
pub struct ConvBn<T: Real> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: RunningStats<T>,
    /// Identifies the batch-norm layer in [`LayerCtx::updates`].
    pub bn_id: usize,
}

impl<T: Real> ConvBn<T> {
    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }
}

pub fn conv_bn<T: Real>(x: &Tensor<T>, p: &ConvBn<T>, ctx: &mut LayerCtx<T>) -> Result<Tensor<T>> {
    let z = conv2d(x, &p.kernel, p.bias.as_ref())?;
    let (y, stats) = batchnorm(&z, &p.gamma, &p.beta, &p.running, ctx.mode)?;
    if let Some(s) = stats {
        ctx.updates.push((p.bn_id, s));
    }
    Ok(y)
}

/// conv -> BN -> ReLU.
pub fn conv_bn_relu<T: Real>(x: &Tensor<T>, p: &ConvBn<T>, ctx: &mut LayerCtx<T>) -> Result<Tensor<T>> {
    conv_bn(x, p, ctx)?.relu()
}

/// Three channel-preserving conv+BN stages with an identity skip.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Real> {
    pub convs: [ConvBn<T>; 3],
}

/// `ReLU(x + B(x))` with `B = conv-BN-ReLU, conv-BN-ReLU, conv-BN`.
pub fn residual_block<T: Real>(x: &Tensor<T>, p: &ResidualBlock<T>, ctx: &mut LayerCtx<T>) -> Result<Tensor<T>> {
    let c = Dims::of("residual_block", x)?.c;
    for conv in &p.convs {
        if conv.in_channels() != c || conv.out_channels() != c {
            return Err(TensorError::ShapeMismatch {
                op: "residual_block",
                lhs: x.shape().to_vec(),
                rhs: conv.kernel.shape().to_vec(),
            });
        }
    }
    let h = conv_bn_relu(x, &p.convs[0], ctx)?;
    let h = conv_bn_relu(&h, &p.convs[1], ctx)?;
    let h = conv_bn(&h, &p.convs[2], ctx)?;
    x.add(&h)?.relu()
}
