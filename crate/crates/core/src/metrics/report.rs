use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auc_scores, ciou_counts, f1, forged_iou, pixel_accuracy, ConfusionCounts, MetricError};
use crate::data::{stack, Sample};
use crate::network::Model;
use crate::tensor::Real;

/// How per-image results are combined into the summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean of per-image scores.
    #[default]
    PerImage,
    /// Scores of the union of all pixels.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub f1: f64,
    pub ciou: f64,
    pub forged_iou: f64,
    pub auc: Option<f64>,
}

impl ImageMetrics {
    pub fn compute(prob: &[f64], gt: &[u8], threshold: f64) -> Self {
        let pred: Vec<u8> = prob.iter().map(|&p| u8::from(p >= threshold)).collect();
        let counts = ConfusionCounts::from_masks(&pred, gt);
        Self {
            counts,
            accuracy: pixel_accuracy(&counts),
            f1: f1(&counts),
            ciou: ciou_counts(&counts),
            forged_iou: forged_iou(&counts),
            auc: auc_scores(prob, gt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub accuracy: f64,
    pub f1: f64,
    pub ciou: f64,
    pub forged_iou: f64,
    /// Absent when the ground truth has a single class.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ImageEntry {
    fn new(id: String, m: &ImageMetrics) -> Self {
        Self {
            id,
            accuracy: m.accuracy,
            f1: m.f1,
            ciou: m.ciou,
            forged_iou: m.forged_iou,
            auc: m.auc,
            tp: m.counts.tp,
            fp: m.counts.fp,
            tn: m.counts.tn,
            fn_: m.counts.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub f1: f64,
    pub ciou: f64,
    pub forged_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    /// Images that contributed to the AUC mean.
    pub auc_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub images: usize,
    pub image: Vec<ImageEntry>,
    pub summary: Summary,
}

const HEADER: &str = "# forgeloc evaluation report\n";

impl EvalReport {
    pub fn to_text(&self) -> String {
        HEADER.to_string() + &toml::to_string(self).expect("report serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, MetricError> {
        toml::from_str(text).map_err(|e| MetricError::Report(e.to_string()))
    }
}

/// Rounds to the 16-bit grid used by saved probability maps, so that reports
/// computed live and from files agree exactly.
pub fn quantize_prob(p: f64) -> f64 {
    (p.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// Scores `(id, probabilities, ground truth)` triples.
pub fn evaluate_maps(maps: &[(String, Vec<f64>, Vec<u8>)], threshold: f64, aggregation: Aggregation) -> Result<EvalReport, MetricError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricError::Threshold(threshold));
    }
    if maps.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some((_, p, g)) = maps.iter().find(|(_, p, g)| p.len() != g.len()) {
        return Err(MetricError::Shape(vec![p.len()], vec![g.len()]));
    }
    let metrics: Vec<ImageMetrics> = maps.par_iter().map(|(_, p, g)| ImageMetrics::compute(p, g, threshold)).collect();
    let summary = match aggregation {
        Aggregation::PerImage => {
            let (auc, auc_images) = mean(metrics.iter().filter_map(|m| m.auc));
            Summary {
                accuracy: mean(metrics.iter().map(|m| m.accuracy)).0,
                f1: mean(metrics.iter().map(|m| m.f1)).0,
                ciou: mean(metrics.iter().map(|m| m.ciou)).0,
                forged_iou: mean(metrics.iter().map(|m| m.forged_iou)).0,
                auc: (auc_images > 0).then_some(auc),
                auc_images,
            }
        }
        Aggregation::Pooled => {
            let counts = metrics.iter().fold(ConfusionCounts::default(), |a, m| a.merge(m.counts));
            let probs: Vec<f64> = maps.iter().flat_map(|(_, p, _)| p.iter().copied()).collect();
            let gts: Vec<u8> = maps.iter().flat_map(|(_, _, g)| g.iter().copied()).collect();
            let auc = auc_scores(&probs, &gts);
            Summary {
                accuracy: pixel_accuracy(&counts),
                f1: f1(&counts),
                ciou: ciou_counts(&counts),
                forged_iou: forged_iou(&counts),
                auc,
                auc_images: if auc.is_some() { maps.len() } else { 0 },
            }
        }
    };
    Ok(EvalReport {
        threshold,
        aggregation,
        images: maps.len(),
        image: maps.iter().zip(&metrics).map(|((id, _, _), m)| ImageEntry::new(id.clone(), m)).collect(),
        summary,
    })
}

/// Probability maps for `samples`, quantized to the 16-bit grid.
pub fn predict_maps<T: Real>(model: &Model<T>, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f64>>, MetricError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = stack::<T>(&refs).map_err(|e| MetricError::Report(e.to_string()))?;
        let prob = model.predict(&images)?;
        let per = prob.len() / chunk.len();
        out.extend(prob.data().chunks_exact(per).map(|p| p.iter().map(|v| quantize_prob(v.as_f64())).collect()));
    }
    Ok(out)
}

/// Runs `model` over `samples` and scores the result. `ids` name the images
/// in the report.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    samples: &[Sample],
    ids: &[String],
    threshold: f64,
    aggregation: Aggregation,
) -> Result<EvalReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    if ids.len() != samples.len() {
        return Err(MetricError::Report(format!("{} ids for {} samples", ids.len(), samples.len())));
    }
    let probs = predict_maps(model, samples, 8)?;
    let maps: Vec<(String, Vec<f64>, Vec<u8>)> =
        ids.iter().zip(probs).zip(samples).map(|((id, p), s)| (id.clone(), p, s.mask.clone())).collect();
    evaluate_maps(&maps, threshold, aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, p: Vec<f64>, g: Vec<u8>) -> (String, Vec<f64>, Vec<u8>) {
        (id.to_string(), p, g)
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let r = evaluate_maps(&[entry("a", vec![0.9, 0.1, 0.8, 0.2], vec![1, 0, 1, 0])], 0.5, Aggregation::PerImage).unwrap();
        let s = &r.summary;
        assert_eq!((s.accuracy, s.f1, s.ciou, s.auc), (1.0, 1.0, 1.0, Some(1.0)));
        let single = evaluate_maps(&[entry("b", vec![0.1, 0.2], vec![0, 0])], 0.5, Aggregation::PerImage).unwrap();
        assert_eq!(single.summary.auc, None);
        assert_eq!(single.summary.auc_images, 0);
        assert_eq!(single.summary.ciou, 1.0);
    }

    #[test]
    fn per_image_mean_of_ciou() {
        // 0.4: forged IoU 0.2 and authentic IoU 0.6 over ten pixels.
        let g1 = vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let p1 = [1, 0, 0, 0, 0, 1, 1, 1, 1, 0].iter().map(|&v| f64::from(v)).collect();
        let g2 = vec![1, 1, 0, 0, 0];
        let p2 = [1, 0, 1, 0, 0].iter().map(|&v| f64::from(v) * 0.9).collect();
        let r = evaluate_maps(&[entry("a", p1, g1), entry("b", p2, g2)], 0.5, Aggregation::PerImage).unwrap();
        let c = [r.image[0].ciou, r.image[1].ciou];
        assert!((r.summary.ciou - (c[0] + c[1]) / 2.0).abs() < 1e-15);
        let pooled = evaluate_maps(
            &[entry("a", vec![1.0, 0.0], vec![1, 0]), entry("b", vec![0.0, 0.0, 0.0], vec![0, 0, 1])],
            0.5,
            Aggregation::Pooled,
        )
        .unwrap();
        assert_eq!(pooled.summary.f1, 2.0 / 3.0);
    }

    #[test]
    fn report_text_round_trips() {
        let maps = [entry("x", vec![0.7, 0.2, 0.6], vec![1, 0, 0]), entry("y", vec![0.3, 0.1], vec![0, 0])];
        let r = evaluate_maps(&maps, 0.5, Aggregation::PerImage).unwrap();
        let text = r.to_text();
        assert!(text.starts_with("# forgeloc evaluation report"));
        assert!(text.find("[[image]]").unwrap() < text.find("[summary]").unwrap());
        assert_eq!(EvalReport::from_text(&text).unwrap(), r);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(evaluate_maps(&[], 0.5, Aggregation::PerImage), Err(MetricError::Empty)));
        let m = [entry("a", vec![0.5], vec![1])];
        assert!(evaluate_maps(&m, 1.0, Aggregation::PerImage).is_err());
        assert!(evaluate_maps(&[entry("a", vec![0.5, 0.1], vec![1])], 0.5, Aggregation::PerImage).is_err());
    }
}
