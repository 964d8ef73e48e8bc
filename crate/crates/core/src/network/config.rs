use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Stages in each encoder and decoder.
pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: expected {expected} entries, got {actual}")]
    Length { field: &'static str, expected: usize, actual: usize },
    #[error("input size {0}x{1} is not divisible by 16")]
    InputSize(usize, usize),
    #[error("{field}: width {width} scaled by {scale} becomes zero")]
    ZeroWidth { field: &'static str, width: usize, scale: WidthScale },
    #[error("invalid width scale `{0}`")]
    WidthScale(String),
    #[error("{0}")]
    Invalid(String),
}

/// First layer of the noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpfKind {
    /// Learned 5x5 prediction-error filters.
    Constrained,
    /// Fixed SRM residual filters.
    Srm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Image and noise encoder-decoders, decoder outputs concatenated.
    TwoStreamLateFusion,
    /// Noise encoder-decoder only.
    NsedOnly,
    /// Both encoders, coarse maps concatenated into a single decoder.
    EarlyFusionSingleDecoder,
}

/// Positive rational multiplier applied to every layer width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthScale {
    num: u32,
    den: u32,
}

impl WidthScale {
    pub const ONE: Self = Self { num: 1, den: 1 };
    pub const QUARTER: Self = Self { num: 1, den: 4 };

    pub fn new(num: u32, den: u32) -> Result<Self, ConfigError> {
        if num == 0 || den == 0 {
            return Err(ConfigError::WidthScale(format!("{num}/{den}")));
        }
        Ok(Self { num, den })
    }

    /// `floor(width * num / den)`.
    pub fn apply(&self, width: usize) -> usize {
        width * self.num as usize / self.den as usize
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthScale {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::WidthScale(s.to_string());
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let num = n.trim().parse().map_err(|_| bad())?;
        let den = d.trim().parse().map_err(|_| bad())?;
        Self::new(num, den).map_err(|_| bad())
    }
}

impl Serialize for WidthScale {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WidthScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Declarative description of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// `(height, width)`, both divisible by 16.
    pub input_size: [usize; 2],
    pub stage_widths: Vec<usize>,
    /// The last entry sets the channel count of each stream's dense maps.
    pub decoder_widths: Vec<usize>,
    pub hpf_kind: HpfKind,
    pub variant: Variant,
    pub width_scale: WidthScale,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: [256, 256],
            stage_widths: vec![32, 64, 128, 256],
            decoder_widths: vec![32, 32, 16, 32],
            hpf_kind: HpfKind::Constrained,
            variant: Variant::TwoStreamLateFusion,
            width_scale: WidthScale::ONE,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Concrete layer widths after scaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths {
    pub stages: [usize; STAGES],
    pub decoder: [usize; STAGES],
}

impl NetworkConfig {
    /// Desk-scale configuration: quarter widths on `size x size` inputs.
    pub fn desk(size: usize) -> Self {
        Self { input_size: [size, size], width_scale: WidthScale::QUARTER, ..Self::default() }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_hpf(mut self, hpf_kind: HpfKind) -> Self {
        self.hpf_kind = hpf_kind;
        self
    }

    pub fn validate(&self) -> Result<Widths, ConfigError> {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(ConfigError::InputSize(h, w));
        }
        if !(self.bn_eps > 0.0) {
            return Err(ConfigError::Invalid(format!("bn_eps must be positive, got {}", self.bn_eps)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(ConfigError::Invalid(format!("bn_momentum must lie in (0, 1), got {}", self.bn_momentum)));
        }
        let scale = |field, v: &[usize]| -> Result<[usize; STAGES], ConfigError> {
            if v.len() != STAGES {
                return Err(ConfigError::Length { field, expected: STAGES, actual: v.len() });
            }
            let mut out = [0; STAGES];
            for (o, &width) in out.iter_mut().zip(v) {
                *o = self.width_scale.apply(width);
                if *o == 0 {
                    return Err(ConfigError::ZeroWidth { field, width, scale: self.width_scale });
                }
            }
            Ok(out)
        };
        Ok(Widths {
            stages: scale("stage_widths", &self.stage_widths)?,
            decoder: scale("decoder_widths", &self.decoder_widths)?,
        })
    }

    /// Canonical text form, the input of the checkpoint config digest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults_validate() {
        let w = NetworkConfig::default().validate().unwrap();
        assert_eq!(w.stages, [32, 64, 128, 256]);
        assert_eq!(w.decoder, [32, 32, 16, 32]);
    }

    #[test]
    fn quarter_scale() {
        let w = NetworkConfig::desk(64).validate().unwrap();
        assert_eq!(w.stages, [8, 16, 32, 64]);
        assert_eq!(w.decoder, [8, 8, 4, 8]);
    }

    #[test]
    fn rejects_bad_configs() {
        let c = NetworkConfig { input_size: [250, 256], ..Default::default() };
        assert_eq!(c.validate(), Err(ConfigError::InputSize(250, 256)));
        let c = NetworkConfig { stage_widths: vec![32, 64, 128], ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Length { .. })));
        let c = NetworkConfig { width_scale: WidthScale::new(1, 64).unwrap(), ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::ZeroWidth { field: "stage_widths", width: 32, .. })));
        assert!("0/3".parse::<WidthScale>().is_err());
        assert!("x".parse::<WidthScale>().is_err());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = NetworkConfig::desk(64).with_variant(Variant::NsedOnly);
        let back: NetworkConfig = toml::from_str(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert!(c.canonical().contains("width_scale = \"1/4\""));
        assert!(toml::from_str::<NetworkConfig>("bogus = 1").is_err());
    }
}
