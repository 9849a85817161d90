//! SGD with momentum, linear warmup and a step decay, trained end to end.

mod run;
mod sgd;

pub use run::{train, train_with, LossRecord, Trainer, CHECKPOINT_NAME, LOG_HEADER, LOG_NAME};
pub use sgd::{sgd_step, Velocity};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, OutputMode};
use crate::config::KeyValues;
use crate::detection::DetectorConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::neck::NeckConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Images per optimizer step, realized by gradient accumulation.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub warmup_steps: usize,
    /// Learning-rate multiplier at step 0.
    pub warmup_floor: f64,
    pub hflip: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale recipe: 20 images, batch 2, 189 epochs with the drop at
    /// epoch 153 (1890 steps).
    pub fn desk(num_classes: usize) -> Self {
        Self {
            model: ModelConfig::desk(num_classes),
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 2,
            epochs: 189,
            lr_drop_epoch: 153,
            warmup_steps: 100,
            warmup_floor: 1e-4,
            hflip: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "base_lr > 0, momentum in [0, 1) and weight_decay >= 0 required",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.epochs > 0 && self.lr_drop_epoch >= self.epochs {
            return Err(Error::invalid(format!(
                "lr_drop_epoch {} must be below epochs {}",
                self.lr_drop_epoch, self.epochs
            )));
        }
        if !(self.warmup_floor > 0.0 && self.warmup_floor <= 1.0) {
            return Err(Error::invalid("warmup_floor must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Parses `key = value` text. `patch_size` is required; every other key
    /// defaults to [`TrainConfig::desk`].
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let num_classes = kv.take_or("num_classes", 3usize)?;
        let d = Self::desk(num_classes);
        let (db, dd) = (&d.model.backbone, &d.model.detector);

        let patch_size: usize = kv.require("patch_size")?;
        let image_size = kv.take_pair("image_size")?.unwrap_or(d.model.image_size);
        let backbone = BackboneConfig {
            patch_size,
            stride: kv.take_or("stride", patch_size)?,
            embed_dim: kv.take_or("embed_dim", db.embed_dim)?,
            num_layers: kv.take_or("num_layers", db.num_layers)?,
            num_heads: kv.take_or("num_heads", db.num_heads)?,
            mlp_ratio: kv.take_or("mlp_ratio", db.mlp_ratio)?,
            pretrained_grid: kv
                .take_pair("pretrained_grid")?
                .unwrap_or((image_size.0 / patch_size.max(1), image_size.1 / patch_size.max(1))),
        };
        let output_mode: OutputMode = kv.take_or("output_mode", d.model.output_mode)?;
        let concat_attn = kv.take_or("concat_attn", false)?;
        let neck = NeckConfig {
            out_channels: kv.take_or("neck_channels", d.model.neck.out_channels)?,
            num_blocks: kv.take_or("neck_blocks", d.model.neck.num_blocks)?,
        };
        let anchor_areas = match kv.take_list::<f64>("anchor_sizes")? {
            Some(sides) => sides.iter().map(|s| s * s).collect(),
            None => dd.anchor_areas.clone(),
        };
        let detector = DetectorConfig {
            anchor_areas,
            aspect_ratios: kv
                .take_list("aspect_ratios")?
                .unwrap_or_else(|| dd.aspect_ratios.clone()),
            rpn_nms_iou: kv.take_or("rpn_nms_iou", dd.rpn_nms_iou)?,
            proposals_train: kv.take_or("proposals_train", dd.proposals_train)?,
            proposals_infer: kv.take_or("proposals_infer", dd.proposals_infer)?,
            final_nms_iou: kv.take_or("final_nms_iou", dd.final_nms_iou)?,
            max_detections: kv.take_or("max_detections", dd.max_detections)?,
            score_floor: kv.take_or("score_floor", dd.score_floor)?,
            head_hidden: kv.take_or("head_hidden", dd.head_hidden)?,
            ..dd.clone()
        };
        let cfg = Self {
            model: ModelConfig {
                backbone,
                output_mode,
                concat_attn,
                neck,
                detector,
                image_size,
            },
            base_lr: kv.take_or("base_lr", d.base_lr)?,
            momentum: kv.take_or("momentum", d.momentum)?,
            weight_decay: kv.take_or("weight_decay", d.weight_decay)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            epochs: kv.take_or("epochs", d.epochs)?,
            lr_drop_epoch: kv.take_or("lr_drop_epoch", d.lr_drop_epoch)?,
            warmup_steps: kv.take_or("warmup_steps", d.warmup_steps)?,
            warmup_floor: kv.take_or("warmup_floor", d.warmup_floor)?,
            hflip: kv.take_or("hflip", d.hflip)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate for optimizer step `step` (0-based) in epoch `epoch`:
/// linear warmup from `base_lr * warmup_floor` to `base_lr` over
/// `warmup_steps`, and a 10x drop from `lr_drop_epoch` on.
pub fn lr_at(step: usize, epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = if step < cfg.warmup_steps {
        cfg.warmup_floor + (1.0 - cfg.warmup_floor) * step as f64 / cfg.warmup_steps as f64
    } else {
        1.0
    };
    let drop = if epoch >= cfg.lr_drop_epoch { 0.1 } else { 1.0 };
    cfg.base_lr * warm * drop
}
