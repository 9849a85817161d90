//! NMS-threshold sweeps over cached head outputs, and overdetection counts.

use std::collections::BTreeMap;

use super::{check_thresholds, coco_suite, SweepCurve};
use crate::data::{resize_keep_aspect, Annotation, Sample};
use crate::detection::{iou, postprocess_at, Detection, DetectorConfig, HeadPredictions};
use crate::error::Result;
use crate::model::Detector;
use crate::numerics::Scalar;

/// Head outputs for one image, computed once and postprocessed at will.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedPrediction {
    pub image_id: u64,
    /// Factor the image was rescaled by before the forward pass.
    pub scale: f64,
    pub pred: HeadPredictions,
}

impl CachedPrediction {
    /// Postprocessed detections in original image coordinates.
    pub fn detections(&self, cfg: &DetectorConfig, nms_iou: f64) -> Result<Vec<Detection>> {
        let mut dets = postprocess_at(&self.pred, cfg, nms_iou)?;
        if self.scale != 1.0 {
            for d in &mut dets {
                d.bbox = d.bbox.scaled(1.0 / self.scale);
            }
        }
        Ok(dets)
    }
}

/// One inference forward pass per sample, after the same aspect-preserving
/// rescale used in training.
pub fn predict_dataset<T: Scalar>(model: &Detector<T>, samples: &[Sample]) -> Result<Vec<CachedPrediction>> {
    let (h, w) = model.cfg.image_size;
    samples
        .iter()
        .map(|s| {
            let r = resize_keep_aspect(s, h.min(w), h.max(w));
            Ok(CachedPrediction {
                image_id: s.image_id,
                scale: r.scale,
                pred: model.predict(&r.sample.image.to_tensor())?,
            })
        })
        .collect()
}

/// Detections of every cached image at one final-NMS threshold.
pub fn detections_at(cached: &[CachedPrediction], cfg: &DetectorConfig, nms_iou: f64) -> Result<Vec<(u64, Detection)>> {
    let mut out = Vec::new();
    for c in cached {
        out.extend(c.detections(cfg, nms_iou)?.into_iter().map(|d| (c.image_id, d)));
    }
    Ok(out)
}

/// Reruns postprocessing on cached predictions at each final-NMS threshold
/// and evaluates each result. Thresholds must be strictly increasing.
pub fn nms_sensitivity_sweep(
    cached: &[CachedPrediction],
    gts: &[Annotation],
    cfg: &DetectorConfig,
    thresholds: &[f64],
) -> Result<SweepCurve> {
    check_thresholds(thresholds)?;
    let reports = thresholds
        .iter()
        .map(|&t| Ok(coco_suite(&detections_at(cached, cfg, t)?, gts)))
        .collect::<Result<Vec<_>>>()?;
    SweepCurve::new(thresholds.to_vec(), reports)
}

/// Same-class detections with IoU at or above the threshold, per ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct OverdetectionStats {
    /// One count per ground-truth box, in annotation order.
    pub counts: Vec<usize>,
    /// Number of boxes with each count.
    pub histogram: BTreeMap<usize, usize>,
    /// Mean count; `None` without ground truth.
    pub mean: Option<f64>,
}

impl OverdetectionStats {
    /// `detections_per_gt,num_gt` rows in ascending count order.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("detections_per_gt,num_gt\n");
        for (k, v) in &self.histogram {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

pub fn overdetection_stats(dets: &[(u64, Detection)], gts: &[Annotation], threshold: f64) -> OverdetectionStats {
    let mut by_image: BTreeMap<u64, Vec<&Detection>> = BTreeMap::new();
    for (id, d) in dets {
        by_image.entry(*id).or_default().push(d);
    }
    let mut counts = Vec::new();
    for a in gts {
        let mine = by_image.get(&a.image_id).map(Vec::as_slice).unwrap_or(&[]);
        for (b, &l) in a.boxes.iter().zip(&a.labels) {
            counts.push(
                mine.iter()
                    .filter(|d| d.class_id == l && iou(&d.bbox, b) >= threshold)
                    .count(),
            );
        }
    }
    let mut histogram = BTreeMap::new();
    for &c in &counts {
        *histogram.entry(c).or_insert(0) += 1;
    }
    let mean = (!counts.is_empty()).then(|| counts.iter().sum::<usize>() as f64 / counts.len() as f64);
    OverdetectionStats {
        counts,
        histogram,
        mean,
    }
}
