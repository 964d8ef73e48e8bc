use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use super::{DataError, ForgeryKind, PostOp, Sample, SampleMeta};
use crate::tensor::{Real, Tensor};

fn file_err(path: &Path, msg: impl ToString) -> DataError {
    DataError::File { path: path.display().to_string(), msg: msg.to_string() }
}

fn open(path: &Path) -> Result<DynamicImage, DataError> {
    image::open(path).map_err(|e| file_err(path, e))
}

fn require_8bit(path: &Path, img: &DynamicImage) -> Result<(), DataError> {
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => Ok(()),
        other => Err(file_err(path, format!("unsupported pixel format {:?}, expected 8 bits per channel", other.color()))),
    }
}

/// Exactly `k / 255` for every 8-bit level, matching the generator's grid.
pub(crate) fn level_to_unit(k: u8) -> f32 {
    (f64::from(k) / 255.0) as f32
}

fn unit_to_level<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn hw<T: Real>(t: &Tensor<T>, channels: usize, what: &str) -> Result<(usize, usize), DataError> {
    match *t.shape() {
        [h, w, c] if c == channels => Ok((h, w)),
        _ => Err(DataError::Shape(format!("{what} must be (h, w, {channels}), got {:?}", t.shape()))),
    }
}

fn write_png(path: &Path, img: DynamicImage) -> Result<(), DataError> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| file_err(path, e))
}

pub(crate) fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<f32>), DataError> {
    let img = open(path)?;
    require_8bit(path, &img)?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok((h as usize, w as usize, rgb.into_raw().into_iter().map(level_to_unit).collect()))
}

pub(crate) fn read_binary(path: &Path) -> Result<(usize, usize, Vec<u8>), DataError> {
    let img = open(path)?;
    require_8bit(path, &img)?;
    let grey = img.to_luma8();
    let (w, h) = grey.dimensions();
    Ok((h as usize, w as usize, grey.into_raw().into_iter().map(|v| u8::from(v >= 128)).collect()))
}

pub(crate) fn write_rgb(path: &Path, h: usize, w: usize, data: &[f32]) -> Result<(), DataError> {
    let raw = data.iter().map(|&v| unit_to_level(v)).collect();
    let img = RgbImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| DataError::Shape("image buffer length".into()))?;
    write_png(path, DynamicImage::ImageRgb8(img))
}

pub(crate) fn write_binary(path: &Path, h: usize, w: usize, mask: &[u8]) -> Result<(), DataError> {
    let raw = mask.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| DataError::Shape("mask buffer length".into()))?;
    write_png(path, DynamicImage::ImageLuma8(img))
}

/// 8-bit RGB (grey and alpha are converted) as an `(h, w, 3)` tensor in `[0, 1]`.
pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>, DataError> {
    let (h, w, data) = read_rgb(path)?;
    let data = data.into_iter().map(|v| T::from_f32(v).expect("f32 converts")).collect();
    Tensor::new(data, &[h, w, 3]).map_err(|e| file_err(path, e))
}

pub fn save_image<T: Real>(path: &Path, image: &Tensor<T>) -> Result<(), DataError> {
    let (h, w) = hw(image, 3, "image")?;
    let data: Vec<f32> = image.data().iter().map(|v| v.as_f64() as f32).collect();
    write_rgb(path, h, w, &data)
}

/// 8-bit mask binarized at 128, as an `(h, w, 1)` tensor of zeros and ones.
pub fn load_mask<T: Real>(path: &Path) -> Result<Tensor<T>, DataError> {
    let (h, w, data) = read_binary(path)?;
    let data = data.into_iter().map(|v| if v == 1 { T::one() } else { T::zero() }).collect();
    Tensor::new(data, &[h, w, 1]).map_err(|e| file_err(path, e))
}

/// Writes any non-zero value as 255.
pub fn save_mask<T: Real>(path: &Path, mask: &Tensor<T>) -> Result<(), DataError> {
    let (h, w) = hw(mask, 1, "mask")?;
    let data: Vec<u8> = mask.data().iter().map(|&v| u8::from(v != T::zero())).collect();
    write_binary(path, h, w, &data)
}

/// 16-bit greyscale, `[0, 1]` mapped linearly onto `[0, 65535]`.
pub fn save_prob_map<T: Real>(path: &Path, prob: &Tensor<T>) -> Result<(), DataError> {
    let (h, w) = hw(prob, 1, "probability map")?;
    let raw: Vec<u16> = prob.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| DataError::Shape("probability map length".into()))?;
    write_png(path, DynamicImage::ImageLuma16(img))
}

pub fn load_prob_map<T: Real>(path: &Path) -> Result<Tensor<T>, DataError> {
    let img = open(path)?;
    let DynamicImage::ImageLuma16(grey) = img else {
        return Err(file_err(path, format!("expected 16-bit greyscale, got {:?}", img.color())));
    };
    let (w, h) = grey.dimensions();
    let data = grey.into_raw().into_iter().map(|v| T::from_f64_lossy(f64::from(v) / 65535.0)).collect();
    Tensor::new(data, &[h as usize, w as usize, 1]).map_err(|e| file_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub kind: ForgeryKind,
    pub post_ops: Vec<PostOp>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    samples: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Writes `<root>/images/<id>.png`, `<root>/masks/<id>.png` and
/// `<root>/manifest.json`, with ids numbered from zero.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<Vec<ManifestEntry>, DataError> {
    let (images, masks) = (root.join("images"), root.join("masks"));
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let id = format!("{i:06}");
        write_rgb(&images.join(format!("{id}.png")), s.height, s.width, &s.image)?;
        write_binary(&masks.join(format!("{id}.png")), s.height, s.width, &s.mask)?;
        entries.push(ManifestEntry { id, seed: s.meta.seed, kind: s.meta.kind, post_ops: s.meta.post_ops.clone() });
    }
    let manifest = Manifest { samples: entries };
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest.samples)
}

/// Manifest entries of a dataset directory, in file order.
pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    if !root.is_dir() {
        return Err(file_err(root, "dataset directory does not exist"));
    }
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| file_err(&path, e))?;
    Ok(manifest.samples)
}

/// Reads a dataset written by [`write_dataset`], in manifest order.
pub fn read_dataset(root: &Path) -> Result<Vec<Sample>, DataError> {
    read_manifest(root)?
        .into_iter()
        .map(|e| {
            let (h, w, image) = read_rgb(&root.join("images").join(format!("{}.png", e.id)))?;
            let mask_path = root.join("masks").join(format!("{}.png", e.id));
            let (mh, mw, mask) = read_binary(&mask_path)?;
            if (mh, mw) != (h, w) {
                return Err(file_err(&mask_path, format!("mask is {mh}x{mw}, image is {h}x{w}")));
            }
            Ok(Sample { height: h, width: w, image, mask, meta: SampleMeta { seed: e.seed, kind: e.kind, post_ops: e.post_ops } })
        })
        .collect()
}
