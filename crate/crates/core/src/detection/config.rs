use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector hyperparameters: anchors, proposal selection, target sampling,
/// head widths and inference postprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Anchor areas in pixels².
    pub anchor_areas: Vec<f64>,
    /// Anchor width-to-height ratios.
    pub aspect_ratios: Vec<f64>,
    pub rpn_nms_iou: f64,
    pub proposals_train: usize,
    pub proposals_infer: usize,
    pub final_nms_iou: f64,
    pub max_detections: usize,
    pub score_floor: f64,
    pub roi_output: (usize, usize),
    /// Bilinear samples per RoI bin along each axis.
    pub roi_sampling: usize,
    /// Foreground categories, background excluded.
    pub num_classes: usize,
    /// Width of the two fully connected layers in the box head.
    pub head_hidden: usize,

    pub rpn_fg_iou: f64,
    pub rpn_bg_iou: f64,
    pub rpn_batch: usize,
    pub rpn_pos_fraction: f64,
    pub head_fg_iou: f64,
    pub head_batch: usize,
    pub head_fg_fraction: f64,
    pub huber_beta: f64,
}

impl DetectorConfig {
    /// Full-size settings: 5 areas x 3 ratios, RPN NMS 0.7, 2000/1000
    /// proposals, final NMS 0.5, 100 detections above 0.05.
    pub fn reference(num_classes: usize) -> Self {
        Self {
            anchor_areas: [32.0f64, 64.0, 128.0, 256.0, 512.0].iter().map(|s| s * s).collect(),
            aspect_ratios: vec![1.0, 0.5, 2.0],
            rpn_nms_iou: 0.7,
            proposals_train: 2000,
            proposals_infer: 1000,
            final_nms_iou: 0.5,
            max_detections: 100,
            score_floor: 0.05,
            roi_output: (7, 7),
            roi_sampling: 2,
            num_classes,
            head_hidden: 1024,
            rpn_fg_iou: 0.7,
            rpn_bg_iou: 0.3,
            rpn_batch: 256,
            rpn_pos_fraction: 0.5,
            head_fg_iou: 0.5,
            head_batch: 128,
            head_fg_fraction: 0.25,
            huber_beta: 1.0,
        }
    }

    /// Reference settings with anchor areas and head width scaled for
    /// ~100-pixel images.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            anchor_areas: [12.0f64, 18.0, 26.0, 36.0, 50.0].iter().map(|s| s * s).collect(),
            head_hidden: 128,
            ..Self::reference(num_classes)
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_areas.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("detector config: {m}")));
        if self.anchor_areas.is_empty() || self.aspect_ratios.is_empty() {
            return bad("need at least one anchor area and ratio");
        }
        if self.anchor_areas.iter().chain(&self.aspect_ratios).any(|v| !(*v > 0.0)) {
            return bad("anchor areas and ratios must be positive");
        }
        if self.num_classes == 0 || self.head_hidden == 0 {
            return bad("num_classes and head_hidden must be positive");
        }
        if self.roi_output.0 == 0 || self.roi_output.1 == 0 || self.roi_sampling == 0 {
            return bad("RoI output and sampling must be positive");
        }
        for (name, v) in [
            ("rpn_nms_iou", self.rpn_nms_iou),
            ("final_nms_iou", self.final_nms_iou),
            ("score_floor", self.score_floor),
            ("rpn_pos_fraction", self.rpn_pos_fraction),
            ("head_fg_fraction", self.head_fg_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.rpn_bg_iou > self.rpn_fg_iou {
            return bad("rpn_bg_iou exceeds rpn_fg_iou");
        }
        if !(self.huber_beta > 0.0) {
            return bad("huber_beta must be positive");
        }
        Ok(())
    }
}
