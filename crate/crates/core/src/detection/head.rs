//! Second-stage box head and inference postprocessing.

use super::boxes::{decode_box, nms, BBox, BoxOffsets};
use super::config::DetectorConfig;
use super::rpn::clamp_offsets;
use super::Detection;
use crate::error::{Error, Result};
use crate::nn::{Linear, Param, Parameterized};
use crate::numerics::{gelu, ops, roi_align, Rng, Scalar, Tensor};

/// Raw head outputs for a batch of regions.
#[derive(Debug, Clone)]
pub struct HeadOutput<T: Scalar> {
    /// `[n, num_classes + 1]`, column 0 is background.
    pub class_logits: Tensor<T>,
    /// `[n, 4 * num_classes]`, offsets for foreground class `k` at columns `4k..4k+4`.
    pub box_deltas: Tensor<T>,
}

/// Pooled-feature MLP with parallel classification and regression layers.
#[derive(Debug, Clone)]
pub struct RoiHead<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub cls: Linear<T>,
    pub bbox: Linear<T>,
    pub num_classes: usize,
    pub roi_output: (usize, usize),
    pub sampling: usize,
}

impl<T: Scalar> RoiHead<T> {
    pub fn new(channels: usize, cfg: &DetectorConfig, rng: &mut Rng) -> Self {
        let (oh, ow) = cfg.roi_output;
        let k = cfg.num_classes;
        Self {
            fc1: Linear::kaiming("head.fc1", oh * ow * channels, cfg.head_hidden, rng),
            fc2: Linear::kaiming("head.fc2", cfg.head_hidden, cfg.head_hidden, rng),
            cls: Linear::normal("head.cls", cfg.head_hidden, k + 1, 0.01, rng),
            bbox: Linear::normal("head.bbox", cfg.head_hidden, 4 * k, 0.001, rng),
            num_classes: k,
            roi_output: cfg.roi_output,
            sampling: cfg.roi_sampling,
        }
    }

    /// Pools `[oh, ow, C]` features for each region (image coordinates).
    pub fn pool(&self, fm: &Tensor<T>, regions: &[BBox], stride: f64) -> Result<Tensor<T>> {
        let boxes: Vec<[f64; 4]> = regions.iter().map(BBox::as_array).collect();
        roi_align(
            fm,
            &boxes,
            1.0 / stride,
            self.roi_output.0,
            self.roi_output.1,
            self.sampling,
        )
    }

    /// Head on already pooled features `[n, oh, ow, C]`.
    pub fn forward_pooled(&self, pooled: &Tensor<T>) -> Result<HeadOutput<T>> {
        let n = pooled.shape()[0];
        let flat = ops::reshape(pooled, &[n, pooled.len() / n.max(1)])?;
        let h = gelu(&self.fc1.forward(&flat)?);
        let h = gelu(&self.fc2.forward(&h)?);
        Ok(HeadOutput {
            class_logits: self.cls.forward(&h)?,
            box_deltas: self.bbox.forward(&h)?,
        })
    }

    pub fn forward(&self, fm: &Tensor<T>, regions: &[BBox], stride: f64) -> Result<HeadOutput<T>> {
        self.forward_pooled(&self.pool(fm, regions, stride)?)
    }
}

impl<T: Scalar> Parameterized<T> for RoiHead<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
        self.cls.visit_params(f);
        self.bbox.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
        self.cls.visit_params_mut(f);
        self.bbox.visit_params_mut(f);
    }
}

/// Head outputs detached from the graph, enough to rerun postprocessing
/// with different settings without another forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPredictions {
    pub proposals: Vec<BBox>,
    pub class_logits: Vec<f64>,
    pub box_deltas: Vec<f64>,
    pub num_classes: usize,
    /// `(height, width)` of the image the proposals live in.
    pub image_size: (usize, usize),
}

impl HeadPredictions {
    pub fn new<T: Scalar>(proposals: Vec<BBox>, out: &HeadOutput<T>, image_size: (usize, usize)) -> Result<Self> {
        let k = out.box_deltas.shape().get(1).copied().unwrap_or(0) / 4;
        let n = proposals.len();
        if out.class_logits.len() != n * (k + 1) || out.box_deltas.len() != n * 4 * k {
            return Err(Error::invalid("head outputs do not match the proposal count"));
        }
        Ok(Self {
            proposals,
            class_logits: out.class_logits.data().iter().map(|v| v.to_f64c()).collect(),
            box_deltas: out.box_deltas.data().iter().map(|v| v.to_f64c()).collect(),
            num_classes: k,
            image_size,
        })
    }

    /// Softmax posterior of region `i`.
    pub fn posterior(&self, i: usize) -> Vec<f64> {
        let row = &self.class_logits[i * (self.num_classes + 1)..][..self.num_classes + 1];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

/// Softmax scores, per-class decoding, score floor, per-class NMS at
/// `cfg.final_nms_iou`, then the top `cfg.max_detections` by score.
pub fn postprocess(pred: &HeadPredictions, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    postprocess_at(pred, cfg, cfg.final_nms_iou)
}

/// [`postprocess`] with an explicit final NMS threshold.
pub fn postprocess_at(pred: &HeadPredictions, cfg: &DetectorConfig, nms_iou: f64) -> Result<Vec<Detection>> {
    let k = pred.num_classes;
    let (h, w) = (pred.image_size.0 as f64, pred.image_size.1 as f64);
    let posteriors: Vec<Vec<f64>> = (0..pred.proposals.len()).map(|i| pred.posterior(i)).collect();
    let mut dets = Vec::new();
    for class in 0..k {
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for (i, proposal) in pred.proposals.iter().enumerate() {
            let score = posteriors[i][class + 1];
            if score < cfg.score_floor {
                continue;
            }
            let t = BoxOffsets::from_slice(&pred.box_deltas[i * 4 * k + 4 * class..][..4]);
            let b = decode_box(&clamp_offsets(t), &proposal.as_anchor())?.clip(w, h);
            if b.width() > 0.0 && b.height() > 0.0 {
                boxes.push(b);
                scores.push(score);
            }
        }
        for i in nms(&boxes, &scores, nms_iou) {
            dets.push(Detection {
                bbox: boxes[i],
                class_id: class,
                score: scores[i],
            });
        }
    }
    // Stable: equal scores keep class order, then NMS order.
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(cfg.max_detections);
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::iou;

    fn predictions(proposals: Vec<BBox>, logits: Vec<f64>, deltas: Vec<f64>, k: usize) -> HeadPredictions {
        HeadPredictions {
            proposals,
            class_logits: logits,
            box_deltas: deltas,
            num_classes: k,
            image_size: (100, 100),
        }
    }

    #[test]
    fn head_output_shapes() {
        let cfg = DetectorConfig::desk(3);
        let mut rng = Rng::new(0);
        let head = RoiHead::<f32>::new(5, &cfg, &mut rng);
        let fm = Tensor::from_vec((0..6 * 6 * 5).map(|_| rng.normal() as f32).collect(), &[6, 6, 5]).unwrap();
        let regions = [
            BBox::new(0.0, 0.0, 20.0, 30.0).unwrap(),
            BBox::new(5.0, 8.0, 40.0, 41.0).unwrap(),
        ];
        let out = head.forward(&fm, &regions, 8.0).unwrap();
        assert_eq!(out.class_logits.shape(), &[2, 4]);
        assert_eq!(out.box_deltas.shape(), &[2, 12]);
        assert_eq!(head.pool(&fm, &regions, 8.0).unwrap().shape(), &[2, 7, 7, 5]);
    }

    #[test]
    fn zero_final_layers_give_uniform_posterior() {
        let cfg = DetectorConfig::desk(3);
        let mut rng = Rng::new(1);
        let mut head = RoiHead::<f64>::new(4, &cfg, &mut rng);
        head.cls
            .visit_params_mut(&mut |p| p.set(vec![0.0; p.value.len()]).unwrap());
        let fm = Tensor::from_vec((0..5 * 5 * 4).map(|_| rng.normal()).collect(), &[5, 5, 4]).unwrap();
        let regions = [BBox::new(1.0, 2.0, 30.0, 25.0).unwrap()];
        let out = head.forward(&fm, &regions, 8.0).unwrap();
        let pred = HeadPredictions::new(regions.to_vec(), &out, (40, 40)).unwrap();
        for p in pred.posterior(0) {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_preserves_argmax() {
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..4).map(|_| rng.normal() * 3.0).collect();
            let pred = predictions(
                vec![BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
                logits.clone(),
                vec![0.0; 12],
                3,
            );
            let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            assert_eq!(argmax(&logits), argmax(&pred.posterior(0)));
        }
    }

    #[test]
    fn background_dominant_regions_yield_nothing() {
        let cfg = DetectorConfig::desk(3);
        let p = predictions(
            vec![BBox::new(10.0, 10.0, 30.0, 30.0).unwrap(); 3],
            [10.0, 0.0, 0.0, 0.0].repeat(3),
            vec![0.0; 36],
            3,
        );
        assert!(postprocess(&p, &cfg).unwrap().is_empty());
    }

    #[test]
    fn single_confident_region() {
        let cfg = DetectorConfig::desk(2);
        let b = BBox::new(10.0, 20.0, 50.0, 60.0).unwrap();
        // Posterior (0.04, 0.9, 0.06).
        let l = [0.04f64.ln(), 0.9f64.ln(), 0.06f64.ln()];
        let dets = postprocess(&predictions(vec![b], l.to_vec(), vec![0.0; 8], 2), &cfg).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].class_id, 0);
        assert_eq!(dets[0].bbox, b);
        assert!((dets[0].score - 0.9).abs() < 1e-12);
        let l = [0.06f64.ln(), 0.9f64.ln(), 0.04f64.ln()];
        let dets = postprocess(&predictions(vec![b], l.to_vec(), vec![0.0; 8], 2), &cfg).unwrap();
        assert_eq!(dets.len(), 1);
    }

    #[test]
    fn nms_is_per_class() {
        let cfg = DetectorConfig::desk(2);
        let b = BBox::new(10.0, 10.0, 40.0, 40.0).unwrap();
        // Two copies of the same box: one scored for class 0, the other for class 1.
        let logits = vec![-5.0, 3.0, -5.0, -5.0, -5.0, 3.0];
        let dets = postprocess(&predictions(vec![b, b], logits, vec![0.0; 16], 2), &cfg).unwrap();
        let mut classes: Vec<usize> = dets.iter().filter(|d| d.score > 0.5).map(|d| d.class_id).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1]);
    }

    #[test]
    fn output_is_capped_and_thresholded() {
        let mut cfg = DetectorConfig::desk(3);
        let mut rng = Rng::new(5);
        let n = 300;
        let proposals: Vec<BBox> = (0..n)
            .map(|_| {
                let (x, y) = (rng.uniform_range(0.0, 80.0), rng.uniform_range(0.0, 80.0));
                BBox::new(x, y, x + rng.uniform_range(2.0, 20.0), y + rng.uniform_range(2.0, 20.0)).unwrap()
            })
            .collect();
        let logits = (0..n * 4).map(|_| rng.normal()).collect();
        let deltas = (0..n * 12).map(|_| rng.normal() * 0.1).collect();
        let p = predictions(proposals, logits, deltas, 3);
        for thr in [0.5, 0.7, 0.9, 0.95] {
            let dets = postprocess_at(&p, &cfg, thr).unwrap();
            assert!(dets.len() <= 100);
            assert!(dets.iter().all(|d| d.score >= 0.05 && d.score <= 1.0));
            assert!(dets.windows(2).all(|w| w[0].score >= w[1].score));
            for (i, a) in dets.iter().enumerate() {
                for b in &dets[i + 1..] {
                    if a.class_id == b.class_id {
                        assert!(iou(&a.bbox, &b.bbox) <= thr);
                    }
                }
            }
        }
        cfg.max_detections = 7;
        assert_eq!(postprocess(&p, &cfg).unwrap().len(), 7);
    }
}
