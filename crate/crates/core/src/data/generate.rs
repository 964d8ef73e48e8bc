use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, ForgeryKind, PostOp, Sample, SampleMeta};
use crate::seed::rng_for;

/// Closed interval `[min, max]`, written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..self.max)
        }
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

impl From<[f64; 2]> for Range {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostOpConfig {
    pub prob: f64,
    pub range: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// `[height, width]`, both multiples of 16.
    pub size: [usize; 2],
    pub forged_fraction: Range,
    /// Probability of emitting an untouched image with an empty mask.
    pub authentic_prob: f64,
    /// Standard deviation of the band-limited noise on the host image.
    pub background_noise: Range,
    /// Standard deviation of the band-limited noise on the pasted region.
    pub donor_noise: Range,
    /// Peak-to-peak amplitude of the smooth intensity gradient.
    pub gradient: Range,
    /// Chance that the donor outline is an ellipse rather than a polygon.
    pub ellipse_prob: f64,
    /// Gaussian blur, parameterized by sigma in pixels.
    pub blur: PostOpConfig,
    /// Contrast scaling about the region mean.
    pub contrast: PostOpConfig,
    /// Additive gaussian noise, parameterized by its standard deviation.
    pub noise: PostOpConfig,
    /// Minimum relative gap between high-pass residual energy inside and
    /// outside the forged region.
    pub residual_margin: f64,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            size: [256, 256],
            forged_fraction: Range::new(0.03, 0.30),
            authentic_prob: 0.0,
            background_noise: Range::new(0.002, 0.010),
            donor_noise: Range::new(0.025, 0.060),
            gradient: Range::new(0.0, 0.3),
            ellipse_prob: 0.5,
            blur: PostOpConfig { prob: 0.25, range: Range::new(0.5, 1.0) },
            contrast: PostOpConfig { prob: 0.25, range: Range::new(0.7, 1.3) },
            noise: PostOpConfig { prob: 0.25, range: Range::new(0.005, 0.02) },
            residual_margin: 0.3,
            max_attempts: 100,
        }
    }
}

impl GenConfig {
    /// Default settings at `64 x 64`.
    pub fn desk() -> Self {
        Self { size: [64, 64], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::Config(msg));
        let [h, w] = self.size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return fail(format!("size {h}x{w} must be positive multiples of 16"));
        }
        let f = self.forged_fraction;
        if !f.is_valid() || f.min <= 0.0 || f.max >= 1.0 {
            return fail(format!("forged fraction [{}, {}] must lie inside (0, 1)", f.min, f.max));
        }
        for (name, p) in [
            ("authentic_prob", self.authentic_prob),
            ("ellipse_prob", self.ellipse_prob),
            ("blur.prob", self.blur.prob),
            ("contrast.prob", self.contrast.prob),
            ("noise.prob", self.noise.prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, r) in [
            ("background_noise", self.background_noise),
            ("donor_noise", self.donor_noise),
            ("gradient", self.gradient),
            ("blur.range", self.blur.range),
            ("contrast.range", self.contrast.range),
            ("noise.range", self.noise.range),
        ] {
            if !r.is_valid() || r.min < 0.0 {
                return fail(format!("{name} [{}, {}] must be a non-negative interval", r.min, r.max));
            }
        }
        if !(0.0..1.0).contains(&self.residual_margin) {
            return fail(format!("residual_margin {} outside [0, 1)", self.residual_margin));
        }
        if self.max_attempts == 0 {
            return fail("max_attempts must be at least 1".into());
        }
        Ok(())
    }
}

/// Smooth colour field plus band-limited noise, unclamped.
fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize, noise: Range, gradient: Range) -> Vec<f64> {
    let noise_sigma = noise.sample(rng);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let amp = gradient.sample(rng);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = (theta.sin(), theta.cos());
    let wave_amp = rng.random_range(0.0..0.05);
    let wave_freq = rng.random_range(0.5..2.0) * std::f64::consts::TAU / h.max(w) as f64;
    let wave_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.3));
    let diag = ((h * h + w * w) as f64).sqrt();

    let white: Vec<f64> = (0..h * w * 3).map(|_| StandardNormal.sample(rng)).collect();
    // 3x3 binomial smoothing scales unit white noise to std 3/8.
    let smooth = binomial3(&white, h, w, 3);
    let gain = noise_sigma / 0.375;

    let mut out = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let t = ((y as f64 - h as f64 / 2.0) * dy + (x as f64 - w as f64 / 2.0) * dx) / diag;
            let wave = wave_amp * ((y as f64 * dx - x as f64 * dy) * wave_freq + wave_phase).sin();
            for c in 0..3 {
                let i = (y * w + x) * 3 + c;
                out[i] = base[c] + tint[c] * (amp * t + wave) + gain * smooth[i];
            }
        }
    }
    out
}

/// Separable `[1, 2, 1] / 4` smoothing with edge clamping.
fn binomial3(src: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    separable(src, h, w, ch, &[0.25, 0.5, 0.25])
}

fn separable(src: &[f64], h: usize, w: usize, ch: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                tmp[(y * w + x) * ch + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[(y * w + clamp(x as isize + k as isize - r, w)) * ch + c])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[(y * w + x) * ch + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[(clamp(y as isize + k as isize - r, h) * w + x) * ch + c])
                    .sum();
            }
        }
    }
    out
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Rasterizes a random ellipse or star-shaped polygon of roughly `area` pixels.
fn outline(rng: &mut ChaCha8Rng, h: usize, w: usize, area: f64, ellipse_prob: f64) -> Vec<u8> {
    let cy = rng.random_range(0.0..h as f64);
    let cx = rng.random_range(0.0..w as f64);
    let inside: Box<dyn Fn(f64, f64) -> bool> = if rng.random_bool(ellipse_prob) {
        let aspect: f64 = rng.random_range(0.5..2.0);
        let a = (area * aspect / std::f64::consts::PI).sqrt();
        let b = (area / (aspect * std::f64::consts::PI)).sqrt();
        let (s, c) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
        Box::new(move |y, x| {
            let (py, px) = (y - cy, x - cx);
            let u = px * c + py * s;
            let v = -px * s + py * c;
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
    } else {
        let k = rng.random_range(5..=9);
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let radii: Vec<f64> = (0..k).map(|_| rng.random_range(0.6..1.0)).collect();
        let unit_area: f64 = (0..k)
            .map(|i| {
                let j = (i + 1) % k;
                let mut d = angles[j] - angles[i];
                if j == 0 {
                    d += std::f64::consts::TAU;
                }
                0.5 * radii[i] * radii[j] * d.sin()
            })
            .sum();
        let scale = (area / unit_area.max(1e-3)).sqrt();
        let verts: Vec<(f64, f64)> = angles
            .iter()
            .zip(&radii)
            .map(|(t, r)| (cy + scale * r * t.sin(), cx + scale * r * t.cos()))
            .collect();
        Box::new(move |y, x| {
            let mut inside = false;
            for i in 0..verts.len() {
                let (y1, x1) = verts[i];
                let (y2, x2) = verts[(i + 1) % verts.len()];
                if (y1 > y) != (y2 > y) && x < x1 + (y - y1) * (x2 - x1) / (y2 - y1) {
                    inside = !inside;
                }
            }
            inside
        })
    };
    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = u8::from(inside(y as f64 + 0.5, x as f64 + 0.5));
        }
    }
    mask
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn post_process(rng: &mut ChaCha8Rng, cfg: &GenConfig, img: &mut [f64], mask: &[u8], h: usize, w: usize) -> Vec<PostOp> {
    let mut ops = Vec::new();
    if rng.random_bool(cfg.blur.prob) {
        ops.push(PostOp::Blur { sigma: cfg.blur.range.sample(rng).max(1e-3) });
    }
    if rng.random_bool(cfg.contrast.prob) {
        ops.push(PostOp::Contrast { factor: cfg.contrast.range.sample(rng) });
    }
    if rng.random_bool(cfg.noise.prob) {
        ops.push(PostOp::Noise { sigma: cfg.noise.range.sample(rng) });
    }
    let region = |i: usize| mask[i / 3] == 1;
    for op in &ops {
        match *op {
            PostOp::Blur { sigma } => {
                let blurred = separable(img, h, w, 3, &gaussian_taps(sigma));
                (0..img.len()).filter(|&i| region(i)).for_each(|i| img[i] = blurred[i]);
            }
            PostOp::Contrast { factor } => {
                let count = mask.iter().filter(|&&m| m == 1).count() as f64;
                for c in 0..3 {
                    let mean = (0..h * w).filter(|&p| mask[p] == 1).map(|p| img[p * 3 + c]).sum::<f64>() / count;
                    for p in (0..h * w).filter(|&p| mask[p] == 1) {
                        img[p * 3 + c] = mean + factor * (img[p * 3 + c] - mean);
                    }
                }
            }
            PostOp::Noise { sigma } => {
                for i in 0..img.len() {
                    let n: f64 = StandardNormal.sample(rng);
                    if region(i) {
                        img[i] += sigma * n;
                    }
                }
            }
        }
    }
    ops
}

/// Mean squared 3x3 high-pass residual of the grey image over pixels whose
/// window lies wholly inside the forged region and wholly outside it.
/// Falls back to all region pixels when the region has no interior.
pub fn residual_variances(sample: &Sample) -> (f64, f64) {
    const K: [[f64; 3]; 3] = [[-0.25, 0.5, -0.25], [0.5, -1.0, 0.5], [-0.25, 0.5, -0.25]];
    let (h, w) = (sample.height, sample.width);
    let grey: Vec<f64> = sample.image.chunks_exact(3).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / 3.0).collect();
    let (mut inner, mut outer, mut edge) = ((0.0, 0usize), (0.0, 0usize), (0.0, 0usize));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut r = 0.0;
            let mut forged = 0;
            for (dy, row) in K.iter().enumerate() {
                for (dx, k) in row.iter().enumerate() {
                    let p = (y + dy - 1) * w + x + dx - 1;
                    r += k * grey[p];
                    forged += usize::from(sample.mask[p]);
                }
            }
            let slot = match forged {
                9 => &mut inner,
                0 => &mut outer,
                _ => &mut edge,
            };
            slot.0 += r * r;
            slot.1 += 1;
            if forged == 9 {
                edge.0 += r * r;
                edge.1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    let forged = if inner.1 > 0 { mean(inner) } else { mean(edge) };
    (forged, mean(outer))
}

/// Renders one sample from its own seed.
pub fn generate_sample(seed: u64, cfg: &GenConfig) -> Result<Sample, DataError> {
    cfg.validate()?;
    let [h, w] = cfg.size;
    let mut rng = rng_for(seed, &[]);
    if rng.random_bool(cfg.authentic_prob) {
        let bg = texture(&mut rng, h, w, cfg.background_noise, cfg.gradient);
        return Ok(Sample {
            height: h,
            width: w,
            image: bg.iter().map(|&v| quantize(v) as f32).collect(),
            mask: vec![0; h * w],
            meta: SampleMeta { seed, kind: ForgeryKind::None, post_ops: Vec::new() },
        });
    }
    for _ in 0..cfg.max_attempts {
        let frac = cfg.forged_fraction.sample(&mut rng);
        let mask = outline(&mut rng, h, w, frac * (h * w) as f64, cfg.ellipse_prob);
        let forged = mask.iter().filter(|&&m| m == 1).count();
        if forged == 0 || !cfg.forged_fraction.contains(forged as f64 / (h * w) as f64) {
            continue;
        }
        let bg: Vec<f64> = texture(&mut rng, h, w, cfg.background_noise, cfg.gradient)
            .into_iter()
            .map(quantize)
            .collect();
        let donor = texture(&mut rng, h, w, cfg.donor_noise, cfg.gradient);
        let mut img = bg.clone();
        for p in (0..h * w).filter(|&p| mask[p] == 1) {
            let px = &mut img[p * 3..p * 3 + 3];
            for c in 0..3 {
                px[c] = quantize(donor[p * 3 + c]);
            }
            if px == &bg[p * 3..p * 3 + 3] {
                let step = if px[0] < 0.5 { 1.0 } else { -1.0 };
                px[0] = quantize(px[0] + step / 255.0);
            }
        }
        let post_ops = post_process(&mut rng, cfg, &mut img, &mask, h, w);
        let sample = Sample {
            height: h,
            width: w,
            image: img.into_iter().map(|v| quantize(v) as f32).collect(),
            mask,
            meta: SampleMeta { seed, kind: ForgeryKind::Splice, post_ops },
        };
        let (vf, vb) = residual_variances(&sample);
        if (vf - vb).abs() >= cfg.residual_margin * vf.max(vb) {
            return Ok(sample);
        }
    }
    Err(DataError::Unsatisfiable(cfg.max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sample() {
        let cfg = GenConfig::desk();
        assert_eq!(generate_sample(3, &cfg).unwrap(), generate_sample(3, &cfg).unwrap());
        assert_ne!(generate_sample(3, &cfg).unwrap().image, generate_sample(4, &cfg).unwrap().image);
    }

    #[test]
    fn values_quantized_and_in_range() {
        let s = generate_sample(11, &GenConfig::desk()).unwrap();
        for &v in &s.image {
            assert!((0.0..=1.0).contains(&v));
            let q = v as f64 * 255.0;
            assert!((q - q.round()).abs() < 1e-3);
        }
        assert!(s.mask.iter().all(|&m| m <= 1));
    }

    #[test]
    fn mask_is_exact_paste_support() {
        // Without post-processing the emitted image is the pre-post-processing
        // composite, so the host can be re-rendered and compared directly.
        let cfg = GenConfig {
            blur: PostOpConfig { prob: 0.0, ..GenConfig::desk().blur },
            contrast: PostOpConfig { prob: 0.0, ..GenConfig::desk().contrast },
            noise: PostOpConfig { prob: 0.0, ..GenConfig::desk().noise },
            residual_margin: 0.0,
            ..GenConfig::desk()
        };
        let [h, w] = cfg.size;
        for seed in 0..20 {
            let s = generate_sample(seed, &cfg).unwrap();
            // Replay the rng to the point where the host texture is drawn.
            let mut rng = rng_for(seed, &[]);
            let _ = rng.random_bool(cfg.authentic_prob);
            let bg = loop {
                let frac = cfg.forged_fraction.sample(&mut rng);
                let mask = outline(&mut rng, h, w, frac * (h * w) as f64, cfg.ellipse_prob);
                let forged = mask.iter().filter(|&&m| m == 1).count();
                if forged > 0 && cfg.forged_fraction.contains(forged as f64 / (h * w) as f64) {
                    assert_eq!(mask, s.mask);
                    break texture(&mut rng, h, w, cfg.background_noise, cfg.gradient);
                }
            };
            for p in 0..h * w {
                let differs = (0..3).any(|c| s.image[p * 3 + c] != quantize(bg[p * 3 + c]) as f32);
                assert_eq!(differs, s.mask[p] == 1, "seed {seed} pixel {p}");
            }
        }
    }

    #[test]
    fn forged_fraction_stays_in_range() {
        let cfg = GenConfig { residual_margin: 0.0, ..GenConfig::desk() };
        for seed in 0..1000 {
            let s = generate_sample(seed, &cfg).unwrap();
            let f = s.forged_fraction();
            assert!(cfg.forged_fraction.contains(f), "seed {seed}: {f}");
        }
    }

    #[test]
    fn residual_contrast_meets_margin() {
        let cfg = GenConfig::desk();
        for seed in 0..50 {
            let s = generate_sample(seed, &cfg).unwrap();
            let (vf, vb) = residual_variances(&s);
            assert!((vf - vb).abs() >= cfg.residual_margin * vf.max(vb));
        }
    }

    #[test]
    fn authentic_samples_have_empty_masks() {
        let cfg = GenConfig { authentic_prob: 1.0, ..GenConfig::desk() };
        let s = generate_sample(1, &cfg).unwrap();
        assert_eq!(s.forged_pixels(), 0);
        assert_eq!(s.meta.kind, ForgeryKind::None);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            GenConfig { size: [60, 64], ..GenConfig::desk() },
            GenConfig { forged_fraction: Range::new(0.0, 0.3), ..GenConfig::desk() },
            GenConfig { forged_fraction: Range::new(0.4, 0.3), ..GenConfig::desk() },
            GenConfig { ellipse_prob: 1.5, ..GenConfig::desk() },
            GenConfig { max_attempts: 0, ..GenConfig::desk() },
        ];
        for cfg in bad {
            assert!(matches!(generate_sample(0, &cfg), Err(DataError::Config(_))));
        }
    }

    #[test]
    fn unsatisfiable_ranges_reported() {
        let cfg = GenConfig { forged_fraction: Range::new(0.5, 0.5), max_attempts: 3, ..GenConfig::desk() };
        assert!(matches!(generate_sample(0, &cfg), Err(DataError::Unsatisfiable(3))));
    }
}
