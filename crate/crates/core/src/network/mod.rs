//! Assembly of the image and noise streams into trainable models.

mod config;
mod model;

pub use config::{ConfigError, HpfKind, NetworkConfig, Variant, WidthScale, Widths, STAGES};
pub use model::{BnBuffer, ForwardOutput, Model, Param, ParamRole, ShapeTrace};

use crate::tensor::{NotDifferentiable, Real, Result, Tensor, TensorError};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary forged/authentic mask: 1 where `prob >= threshold`.
pub fn predict_mask<T: Real>(prob: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TensorError::InvalidArgument {
            op: "predict_mask",
            msg: format!("threshold {threshold} outside (0, 1)"),
        });
    }
    let t = T::from_f64_lossy(threshold);
    let data = prob.data().iter().map(|&p| if p >= t { T::one() } else { T::zero() }).collect();
    Tensor::from_op(data, prob.shape(), vec![prob.clone()], NotDifferentiable("predict_mask"))
}
