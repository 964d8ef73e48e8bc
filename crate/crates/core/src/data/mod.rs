//! Synthetic splice forgeries, augmentation, raster I/O and dataset layout.

mod augment;
mod generate;
mod io;
mod split;

pub use augment::{augment, AugmentConfig};
pub use generate::{generate_sample, residual_variances, GenConfig, PostOpConfig, Range};
pub use io::{
    load_image, load_mask, load_prob_map, read_dataset, read_manifest, save_image, save_mask, save_prob_map, write_dataset,
    ManifestEntry,
};
pub use split::{dataset_split, Split};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no placement satisfied the configured ranges after {0} attempts")]
    Unsatisfiable(usize),
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeryKind {
    Splice,
    None,
}

/// Post-processing applied to the pasted region only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PostOp {
    Blur { sigma: f64 },
    Contrast { factor: f64 },
    Noise { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub kind: ForgeryKind,
    pub post_ops: Vec<PostOp>,
}

/// RGB image in `[0, 1]`, interleaved row-major, with its binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    /// 1 = forged, 0 = authentic.
    pub mask: Vec<u8>,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn forged_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn forged_fraction(&self) -> f64 {
        self.forged_pixels() as f64 / self.mask.len() as f64
    }

    pub fn image_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.image.iter().map(|&v| T::from_f32(v).expect("f32 converts")).collect();
        Tensor::new(data, &[self.height, self.width, 3]).expect("sample buffers match their extents")
    }

    pub fn mask_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.mask.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor::new(data, &[self.height, self.width, 1]).expect("sample buffers match their extents")
    }
}

/// Stacks samples of equal size into `(n, h, w, 3)` images and `(n, h, w, 1)` masks.
pub fn stack<T: Real>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>), DataError> {
    let first = samples.first().ok_or_else(|| DataError::Shape("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut images = Vec::with_capacity(samples.len() * h * w * 3);
    let mut masks = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(DataError::Shape(format!("batch mixes {h}x{w} and {}x{}", s.height, s.width)));
        }
        images.extend(s.image.iter().map(|&v| T::from_f32(v).expect("f32 converts")));
        masks.extend(s.mask.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }));
    }
    let n = samples.len();
    let images = Tensor::new(images, &[n, h, w, 3]).map_err(|e| DataError::Shape(e.to_string()))?;
    let masks = Tensor::new(masks, &[n, h, w, 1]).map_err(|e| DataError::Shape(e.to_string()))?;
    Ok((images, masks))
}
