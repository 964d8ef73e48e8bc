use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Sample};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub crop_prob: f64,
    /// `[height, width]` of the zoom-crop window, multiples of 16.
    pub crop_size: [usize; 2],
    /// Augmented copies of each training sample per epoch.
    pub multiplicity: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, hflip_prob: 0.5, vflip_prob: 0.5, crop_prob: 0.0, crop_size: [48, 48], multiplicity: 1 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob), ("crop_prob", self.crop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        let [ch, cw] = self.crop_size;
        if ch == 0 || cw == 0 || ch % 16 != 0 || cw % 16 != 0 {
            return Err(DataError::Config(format!("crop size {ch}x{cw} must be positive multiples of 16")));
        }
        if self.multiplicity == 0 {
            return Err(DataError::Config("multiplicity must be at least 1".into()));
        }
        Ok(())
    }
}

fn remap(s: &Sample, src: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let (h, w) = (s.height, s.width);
    let mut image = vec![0.0; s.image.len()];
    let mut mask = vec![0; s.mask.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y, x);
            let (d, q) = (y * w + x, sy * w + sx);
            image[d * 3..d * 3 + 3].copy_from_slice(&s.image[q * 3..q * 3 + 3]);
            mask[d] = s.mask[q];
        }
    }
    Sample { image, mask, ..s.clone() }
}

pub(crate) fn hflip(s: &Sample) -> Sample {
    remap(s, |y, x| (y, s.width - 1 - x))
}

pub(crate) fn vflip(s: &Sample) -> Sample {
    remap(s, |y, x| (s.height - 1 - y, x))
}

/// Applies a random subset of horizontal flip, vertical flip and a zoom-crop
/// around a forged pixel, resized back with nearest-neighbour sampling.
/// Samples without forged pixels only get flipped.
pub fn augment(s: &Sample, seed: u64, cfg: &AugmentConfig) -> Result<Sample, DataError> {
    cfg.validate()?;
    let [ch, cw] = cfg.crop_size;
    if cfg.crop_prob > 0.0 && (ch > s.height || cw > s.width) {
        return Err(DataError::Config(format!("crop {ch}x{cw} exceeds image {}x{}", s.height, s.width)));
    }
    let mut rng = rng_for(seed, &[]);
    let do_h = rng.random_bool(cfg.hflip_prob);
    let do_v = rng.random_bool(cfg.vflip_prob);
    let do_crop = rng.random_bool(cfg.crop_prob);
    let mut out = s.clone();
    if do_crop {
        let forged: Vec<usize> = (0..s.mask.len()).filter(|&p| s.mask[p] == 1).collect();
        if !forged.is_empty() {
            let p = forged[rng.random_range(0..forged.len())];
            let (py, px) = (p / s.width, p % s.width);
            let y0 = rng.random_range(py.saturating_sub(ch - 1)..=py.min(s.height - ch));
            let x0 = rng.random_range(px.saturating_sub(cw - 1)..=px.min(s.width - cw));
            let (h, w) = (s.height, s.width);
            out = remap(s, |y, x| (y0 + y * ch / h, x0 + x * cw / w));
        }
    }
    if do_h {
        out = hflip(&out);
    }
    if do_v {
        out = vflip(&out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, GenConfig};

    fn sample(seed: u64) -> Sample {
        generate_sample(seed, &GenConfig::desk()).unwrap()
    }

    #[test]
    fn flips_are_involutions_and_keep_forged_count() {
        let s = sample(1);
        assert_eq!(hflip(&hflip(&s)), s);
        assert_eq!(vflip(&vflip(&s)), s);
        assert_ne!(hflip(&s), s);
        assert_eq!(hflip(&s).forged_pixels(), s.forged_pixels());
        assert_eq!(vflip(&s).forged_pixels(), s.forged_pixels());
    }

    #[test]
    fn flip_only_preserves_forged_count() {
        let s = sample(2);
        let cfg = AugmentConfig::default();
        for seed in 0..20 {
            let a = augment(&s, seed, &cfg).unwrap();
            assert_eq!((a.height, a.width), (s.height, s.width));
            assert_eq!(a.image.len(), s.image.len());
            assert_eq!(a.forged_pixels(), s.forged_pixels());
        }
    }

    #[test]
    fn zoom_crops_always_keep_forgery() {
        let cfg = AugmentConfig { crop_prob: 1.0, crop_size: [32, 32], ..AugmentConfig::default() };
        let samples: Vec<Sample> = (0..10).map(sample).collect();
        for seed in 0..1000u64 {
            let s = &samples[seed as usize % samples.len()];
            let a = augment(s, seed, &cfg).unwrap();
            assert!(a.forged_pixels() >= 1, "seed {seed}");
            assert_eq!(a.mask.len() * 3, a.image.len());
        }
    }

    #[test]
    fn crop_without_forgery_falls_back_to_flips() {
        let gen = GenConfig { authentic_prob: 1.0, ..GenConfig::desk() };
        let s = generate_sample(0, &gen).unwrap();
        let cfg = AugmentConfig { crop_prob: 1.0, hflip_prob: 0.0, vflip_prob: 0.0, ..AugmentConfig::default() };
        assert_eq!(augment(&s, 5, &cfg).unwrap(), s);
    }

    #[test]
    fn bad_crop_sizes_rejected() {
        let s = sample(0);
        let too_big = AugmentConfig { crop_prob: 0.5, crop_size: [80, 80], ..AugmentConfig::default() };
        assert!(augment(&s, 0, &too_big).is_err());
        let odd = AugmentConfig { crop_size: [40, 40], ..AugmentConfig::default() };
        assert!(augment(&s, 0, &odd).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let s = sample(3);
        let cfg = AugmentConfig { crop_prob: 0.5, crop_size: [32, 32], ..AugmentConfig::default() };
        assert_eq!(augment(&s, 9, &cfg).unwrap(), augment(&s, 9, &cfg).unwrap());
    }
}
