//! Region proposal network and proposal selection.

use super::boxes::{decode_box, nms, Anchor, BBox, BoxOffsets};
use super::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Param, Parameterized};
use crate::numerics::{gelu, ops, Rng, Scalar, Tensor};

/// Largest log-scale extent change applied when decoding predictions.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Dense per-anchor predictions, aligned with [`generate_anchors`](super::generate_anchors).
#[derive(Debug, Clone)]
pub struct RpnOutput<T: Scalar> {
    /// One logit per anchor.
    pub objectness: Tensor<T>,
    /// Four offsets per anchor, flattened.
    pub offsets: Tensor<T>,
}

impl<T: Scalar> RpnOutput<T> {
    pub fn num_anchors(&self) -> usize {
        self.objectness.len()
    }

    pub fn offsets_at(&self, i: usize) -> BoxOffsets {
        let o = &self.offsets.data()[4 * i..4 * i + 4];
        BoxOffsets {
            tx: o[0].to_f64c(),
            ty: o[1].to_f64c(),
            tw: o[2].to_f64c(),
            th: o[3].to_f64c(),
        }
    }
}

/// Shared 3x3 conv + GELU feeding 1x1 objectness and offset heads.
#[derive(Debug, Clone)]
pub struct Rpn<T: Scalar> {
    pub conv: Conv2d<T>,
    pub cls: Conv2d<T>,
    pub bbox: Conv2d<T>,
    pub anchors_per_cell: usize,
}

impl<T: Scalar> Rpn<T> {
    pub fn new(channels: usize, anchors_per_cell: usize, rng: &mut Rng) -> Self {
        let a = anchors_per_cell;
        let conv = Param::kaiming("rpn.conv.weight", &[3, 3, channels, channels], 9 * channels, rng);
        let cls = Param::normal("rpn.cls.weight", &[1, 1, channels, a], 0.01, rng);
        let bbox = Param::normal("rpn.bbox.weight", &[1, 1, channels, 4 * a], 0.01, rng);
        Self {
            conv: Conv2d::new("rpn.conv", conv, true, 1, 1),
            cls: Conv2d::new("rpn.cls", cls, true, 1, 0),
            bbox: Conv2d::new("rpn.bbox", bbox, true, 1, 0),
            anchors_per_cell: a,
        }
    }

    pub fn forward(&self, fm: &Tensor<T>) -> Result<RpnOutput<T>> {
        let expected = self.conv.weight.value.shape()[2];
        if fm.shape().len() != 3 || fm.shape()[2] != expected {
            return Err(Error::invalid(format!(
                "rpn expects {expected} channels, got shape {:?}",
                fm.shape()
            )));
        }
        let h = gelu(&self.conv.forward(fm)?);
        let logits = self.cls.forward(&h)?;
        let offsets = self.bbox.forward(&h)?;
        Ok(RpnOutput {
            objectness: ops::reshape(&logits, &[logits.len()])?,
            offsets: ops::reshape(&offsets, &[offsets.len()])?,
        })
    }
}

impl<T: Scalar> Parameterized<T> for Rpn<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit_params(f);
        self.cls.visit_params(f);
        self.bbox.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_params_mut(f);
        self.cls.visit_params_mut(f);
        self.bbox.visit_params_mut(f);
    }
}

/// Offsets with extent changes clamped to [`MAX_LOG_SCALE`].
pub fn clamp_offsets(t: BoxOffsets) -> BoxOffsets {
    BoxOffsets {
        tw: t.tw.min(MAX_LOG_SCALE),
        th: t.th.min(MAX_LOG_SCALE),
        ..t
    }
}

/// Decodes every anchor, clips to the image, drops boxes under one pixel,
/// runs NMS at `cfg.rpn_nms_iou` on objectness and keeps the top
/// `proposals_train` / `proposals_infer`. Returns boxes with their logits in
/// descending score order.
pub fn select_proposals(
    objectness: &[f64],
    offsets: &[BoxOffsets],
    anchors: &[Anchor],
    image_size: (usize, usize),
    training: bool,
    cfg: &DetectorConfig,
) -> Result<Vec<(BBox, f64)>> {
    if objectness.len() != anchors.len() || offsets.len() != anchors.len() {
        return Err(Error::invalid("select_proposals: predictions not aligned with anchors"));
    }
    let (h, w) = (image_size.0 as f64, image_size.1 as f64);
    let mut boxes = Vec::with_capacity(anchors.len());
    let mut scores = Vec::with_capacity(anchors.len());
    for ((t, a), &s) in offsets.iter().zip(anchors).zip(objectness) {
        let b = decode_box(&clamp_offsets(*t), a)?.clip(w, h);
        if b.width() >= 1.0 && b.height() >= 1.0 && s.is_finite() {
            boxes.push(b);
            scores.push(s);
        }
    }
    let cap = if training {
        cfg.proposals_train
    } else {
        cfg.proposals_infer
    };
    Ok(nms(&boxes, &scores, cfg.rpn_nms_iou)
        .into_iter()
        .take(cap)
        .map(|i| (boxes[i], scores[i]))
        .collect())
}
