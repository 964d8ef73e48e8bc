//! Class-imbalance aware segmentation losses on a single sigmoid map.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Result, Tensor, TensorError};

/// Probabilities are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before the log.
pub const LOG_CLAMP: f64 = 1e-12;
pub const DEFAULT_DICE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    WeightedCe,
    /// `lambda * CE + (1 - lambda) * Dice`.
    Combined,
}

/// Class weights for the cross-entropy term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeights {
    /// `"median"`: median-frequency balancing over the training masks.
    Median(MedianTag),
    /// `[w_authentic, w_forged]`.
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianTag {
    Median,
}

impl ClassWeights {
    pub const MEDIAN: Self = ClassWeights::Median(MedianTag::Median);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the cross-entropy term for [`LossKind::Combined`].
    pub lambda: f64,
    pub class_weights: ClassWeights,
    /// Added to numerator and denominator of each Dice class term.
    pub epsilon: f64,
    /// Use `1 - mean` over classes instead of `1 - sum`, giving range [0, 1].
    pub dice_mean_over_classes: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Dice,
            lambda: 0.5,
            class_weights: ClassWeights::MEDIAN,
            epsilon: DEFAULT_DICE_EPSILON,
            dice_mean_over_classes: false,
        }
    }
}

impl LossConfig {
    pub fn dice() -> Self {
        Self::default()
    }

    pub fn weighted_ce() -> Self {
        Self { kind: LossKind::WeightedCe, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TensorError::InvalidArgument { op: "loss config", msg });
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let ClassWeights::Fixed(w) = self.class_weights {
            if !w.iter().all(|&v| v > 0.0 && v.is_finite()) {
                return bad(format!("class weights must be positive, got {w:?}"));
            }
        }
        Ok(())
    }
}

/// Two-class view of a sigmoid map: `p_forged = prob`, `p_authentic = 1 - prob`.
pub struct ClassProbs<T: Real> {
    pub p_forged: Tensor<T>,
    pub p_authentic: Tensor<T>,
    pub g_forged: Tensor<T>,
    pub g_authentic: Tensor<T>,
}

fn check_pair<T: Real>(op: &'static str, prob: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if prob.shape() != gt.shape() {
        return Err(TensorError::ShapeMismatch { op, lhs: prob.shape().to_vec(), rhs: gt.shape().to_vec() });
    }
    if let Some(v) = gt.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(TensorError::InvalidArgument { op, msg: format!("mask value {v} is not 0 or 1") });
    }
    if let Some(v) = prob.data().iter().find(|&&v| v < T::zero() || v > T::one()) {
        return Err(TensorError::InvalidArgument { op, msg: format!("probability {v} outside [0, 1]") });
    }
    Ok(())
}

pub fn class_probs<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>) -> Result<ClassProbs<T>> {
    check_pair("class_probs", prob, gt)?;
    let complement = |t: &Tensor<T>| t.scale(-T::one())?.add_scalar(T::one());
    Ok(ClassProbs {
        p_forged: prob.clone(),
        p_authentic: complement(prob)?,
        g_forged: gt.detach(),
        g_authentic: complement(&gt.detach())?,
    })
}

/// `-(1/M) sum_c sum_i w_c g_c(i) log p_c(i)`, with `weights = [w_authentic, w_forged]`
/// and `M` the number of pixels in the batch.
pub fn weighted_ce<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>, weights: [f64; 2]) -> Result<Tensor<T>> {
    let cp = class_probs(prob, gt)?;
    let lo = T::from_f64_lossy(LOG_CLAMP);
    let hi = T::one() - lo;
    let term = |p: &Tensor<T>, g: &Tensor<T>, w: f64| -> Result<Tensor<T>> {
        p.clamp(lo, hi)?.log()?.mul(&g.scale(T::from_f64_lossy(w))?.detach())
    };
    let total = term(&cp.p_authentic, &cp.g_authentic, weights[0])?
        .add(&term(&cp.p_forged, &cp.g_forged, weights[1])?)?
        .sum()?;
    let m = T::from_usize(prob.len()).expect("pixel count fits");
    total.scale(-T::one() / m)
}

/// `1 - sum_c (2 sum g_c p_c + eps) / (sum g_c^2 + sum p_c^2 + eps)`; with
/// `mean_over_classes` the class terms are averaged instead of summed.
pub fn dice_loss<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>, epsilon: f64, mean_over_classes: bool) -> Result<Tensor<T>> {
    let cp = class_probs(prob, gt)?;
    let eps = T::from_f64_lossy(epsilon);
    let ratio = |p: &Tensor<T>, g: &Tensor<T>| -> Result<Tensor<T>> {
        let gg: T = g.data().iter().map(|&v| v * v).sum();
        let num = p.mul(g)?.sum()?.scale(T::from_f64_lossy(2.0))?.add_scalar(eps)?;
        let den = p.mul(p)?.sum()?.add_scalar(gg + eps)?;
        num.div(&den)
    };
    let total = ratio(&cp.p_authentic, &cp.g_authentic)?.add(&ratio(&cp.p_forged, &cp.g_forged)?)?;
    let k = if mean_over_classes { T::from_f64_lossy(0.5) } else { T::one() };
    total.scale(-k)?.add_scalar(T::one())
}

/// Loss selected by `cfg`; `weights` are the resolved class weights.
pub fn loss<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig, weights: [f64; 2]) -> Result<Tensor<T>> {
    match cfg.kind {
        LossKind::Dice => dice_loss(prob, gt, cfg.epsilon, cfg.dice_mean_over_classes),
        LossKind::WeightedCe => weighted_ce(prob, gt, weights),
        LossKind::Combined => {
            let ce = weighted_ce(prob, gt, weights)?.scale(T::from_f64_lossy(cfg.lambda))?;
            let dice = dice_loss(prob, gt, cfg.epsilon, cfg.dice_mean_over_classes)?
                .scale(T::from_f64_lossy(1.0 - cfg.lambda))?;
            ce.add(&dice)
        }
    }
}

/// Median-frequency class weights `[w_authentic, w_forged]` from pixel counts
/// over a whole dataset. With two classes the median is the mean frequency.
pub fn median_freq_weights(authentic: u64, forged: u64) -> Result<[f64; 2]> {
    if authentic == 0 || forged == 0 {
        return Err(TensorError::InvalidArgument {
            op: "median_freq_weights",
            msg: format!("both classes must occur (authentic {authentic}, forged {forged})"),
        });
    }
    let total = (authentic + forged) as f64;
    let f = [authentic as f64 / total, forged as f64 / total];
    let median = (f[0] + f[1]) / 2.0;
    Ok([median / f[0], median / f[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
        Tensor::new(v, shape).unwrap()
    }

    fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f64>, Tensor<f64>) {
        let p = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let g = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        (t(p, &[n]), t(g, &[n]))
    }

    #[test]
    fn class_probs_view() {
        let cp = class_probs(&t(vec![0.8, 0.5], &[2]), &t(vec![1.0, 0.0], &[2])).unwrap();
        assert_eq!(cp.p_forged.data(), &[0.8, 0.5]);
        assert!((cp.p_authentic.data()[0] - 0.2).abs() < 1e-15);
        assert_eq!(cp.p_authentic.data()[1], 0.5);
        assert_eq!(cp.g_forged.data(), &[1.0, 0.0]);
        assert_eq!(cp.g_authentic.data(), &[0.0, 1.0]);
        for (a, b) in cp.p_forged.data().iter().zip(cp.p_authentic.data()) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
        assert!(class_probs(&t(vec![0.5], &[1]), &t(vec![0.5], &[1])).is_err());
        assert!(class_probs(&t(vec![0.5, 0.1], &[2]), &t(vec![1.0], &[1])).is_err());
    }

    #[test]
    fn weighted_ce_hand_values() {
        let l = weighted_ce(&t(vec![0.5], &[1]), &t(vec![1.0], &[1]), [1.0, 1.0]).unwrap();
        assert!((l.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let exact = weighted_ce(&t(vec![1.0, 0.0], &[2]), &t(vec![1.0, 0.0], &[2]), [3.0, 7.0]).unwrap();
        assert!(exact.item().unwrap() <= 1e-11 * 7.0);
        assert!(exact.item().unwrap() >= 0.0);
    }

    #[test]
    fn dice_hand_values() {
        let g = t(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let same = dice_loss(&g, &g, DEFAULT_DICE_EPSILON, false).unwrap().item().unwrap();
        assert!((same + 1.0).abs() < 1e-12, "{same}");
        let comp = t(vec![0.0, 1.0, 1.0, 0.0], &[2, 2]);
        let opposite = dice_loss(&comp, &g, DEFAULT_DICE_EPSILON, false).unwrap().item().unwrap();
        assert!((opposite - 1.0).abs() < 1e-6, "{opposite}");
        let mean = dice_loss(&g, &g, DEFAULT_DICE_EPSILON, true).unwrap().item().unwrap();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn losses_within_range_and_scale_with_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (p, g) = random_pair(&mut rng, 16);
            let d = dice_loss(&p, &g, DEFAULT_DICE_EPSILON, false).unwrap().item().unwrap();
            assert!((-1.0..=1.0).contains(&d));
            let w = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
            let ce = weighted_ce(&p, &g, w).unwrap().item().unwrap();
            assert!(ce >= 0.0);
            let k = rng.random_range(0.1..10.0);
            let scaled = weighted_ce(&p, &g, [k * w[0], k * w[1]]).unwrap().item().unwrap();
            assert!((scaled - k * ce).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }

    #[test]
    fn combined_mixes_the_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, g) = random_pair(&mut rng, 9);
        let cfg = LossConfig { kind: LossKind::Combined, lambda: 0.3, ..LossConfig::default() };
        let w = [0.7, 1.9];
        let c = loss(&p, &g, &cfg, w).unwrap().item().unwrap();
        let ce = weighted_ce(&p, &g, w).unwrap().item().unwrap();
        let d = dice_loss(&p, &g, cfg.epsilon, false).unwrap().item().unwrap();
        assert!((c - (0.3 * ce + 0.7 * d)).abs() < 1e-14);
    }

    #[test]
    fn loss_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (p, g) = random_pair(&mut rng, 12);
            let e1 = finite_diff_check(|p| dice_loss(p, &g, DEFAULT_DICE_EPSILON, false), &p, 1e-6).unwrap();
            let e2 = finite_diff_check(|p| weighted_ce(p, &g, [0.6, 2.5]), &p, 1e-6).unwrap();
            assert!(e1 < 1e-4 && e2 < 1e-4, "{e1} {e2}");
        }
    }

    #[test]
    fn median_frequency_examples() {
        let w = median_freq_weights(9, 1).unwrap();
        assert!((w[0] - 0.5 / 0.9).abs() < 1e-12 && (w[1] - 5.0).abs() < 1e-12);
        assert_eq!(median_freq_weights(5, 5).unwrap(), [1.0, 1.0]);
        // all-zero 2x2 plus half-forged 2x2: 6 authentic, 2 forged
        let w = median_freq_weights(6, 2).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
        assert!(median_freq_weights(4, 0).is_err());
    }

    #[test]
    fn config_parsing() {
        let c: LossConfig = toml::from_str("kind = \"weighted_ce\"\nclass_weights = [1.0, 4.0]").unwrap();
        assert_eq!(c.class_weights, ClassWeights::Fixed([1.0, 4.0]));
        let c: LossConfig = toml::from_str("class_weights = \"median\"").unwrap();
        assert_eq!(c.class_weights, ClassWeights::MEDIAN);
        assert!(toml::from_str::<LossConfig>("kind = \"focal\"").is_err());
        assert!(LossConfig { lambda: 1.5, ..LossConfig::default() }.validate().is_err());
    }
}
