//! Network building blocks on `(n, h, w, c)` or `(h, w, c)` tensors.

mod batchnorm;
mod conv;
mod hpf;
mod init;
mod pool;
mod residual;

pub use batchnorm::{batchnorm, BatchStats, BnMode, RunningStats};
pub use conv::conv2d;
pub use hpf::{
    constraint_residual, project_constrained, srm_filter_bank, srm_kernels, Projection,
    CONSTRAINED_KERNEL, DEGENERATE_SUM,
};
pub use init::{constrained_uniform, kaiming_uniform, CONSTRAINED_INIT_BOUND};
pub use pool::{maxpool2x2, upsample2x};
pub use residual::{conv_bn, conv_bn_relu, residual_block, ConvBn, LayerCtx, ResidualBlock};

use crate::tensor::{Real, Result, Tensor, TensorError};

/// Batch, height, width and channel extents of an image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub(crate) fn of<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<Self> {
        match *x.shape() {
            [h, w, c] => Ok(Self { n: 1, h, w, c }),
            [n, h, w, c] => Ok(Self { n, h, w, c }),
            _ => Err(TensorError::InvalidArgument {
                op,
                msg: format!("expected (h, w, c) or (n, h, w, c), got {:?}", x.shape()),
            }),
        }
    }

    /// Output shape with the same rank as `like`.
    pub(crate) fn shape_like(&self, like: &[usize]) -> Vec<usize> {
        if like.len() == 3 {
            vec![self.h, self.w, self.c]
        } else {
            vec![self.n, self.h, self.w, self.c]
        }
    }

    pub(crate) fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }
}
