//! The assembled detector: encoder, spatial reinterpretation, neck, RPN and box head.

use serde::{Deserialize, Serialize};

use crate::backbone::{spatial_channels, to_spatial, Backbone, BackboneConfig, OutputMode};
use crate::detection::{
    assign_head_targets, assign_rpn_targets, detection_loss, generate_anchors, postprocess, select_proposals, Anchor,
    BBox, Detection, DetectionLoss, DetectorConfig, HeadPredictions, RoiHead, Rpn,
};
use crate::error::{Error, Result};
use crate::neck::{Neck, NeckConfig};
use crate::nn::{Mode, Param, Parameterized};
use crate::numerics::{no_grad, Rng, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub output_mode: OutputMode,
    pub concat_attn: bool,
    pub neck: NeckConfig,
    pub detector: DetectorConfig,
    /// Input `(height, width)`; fixes the patch grid, which sets the channel
    /// count when attention maps are concatenated.
    pub image_size: (usize, usize),
}

impl ModelConfig {
    /// Desk-scale model for 96x96 inputs.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            backbone: BackboneConfig::desk(),
            output_mode: OutputMode::Final,
            concat_attn: false,
            neck: NeckConfig {
                out_channels: 32,
                num_blocks: 2,
            },
            detector: DetectorConfig::desk(num_classes),
            image_size: (96, 96),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.neck.validate()?;
        self.detector.validate()?;
        self.backbone.grid_for(self.image_size.0, self.image_size.1)?;
        if self.concat_attn && self.backbone.num_layers == 0 {
            return Err(Error::invalid(
                "attention concatenation needs at least one encoder layer",
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<(usize, usize)> {
        self.backbone.grid_for(self.image_size.0, self.image_size.1)
    }

    /// Channels of the spatial map entering the neck.
    pub fn spatial_channels(&self) -> Result<usize> {
        Ok(spatial_channels(
            &self.backbone,
            self.output_mode,
            self.concat_attn,
            self.grid()?,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct Detector<T: Scalar> {
    pub cfg: ModelConfig,
    pub backbone: Backbone<T>,
    pub neck: Neck<T>,
    pub rpn: Rpn<T>,
    pub head: RoiHead<T>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::new(cfg.backbone.clone(), rng)?;
        let neck = Neck::new(cfg.neck.clone(), cfg.spatial_channels()?, rng)?;
        let c = cfg.neck.out_channels;
        let rpn = Rpn::new(c, cfg.detector.anchors_per_cell(), rng);
        let head = RoiHead::new(c, &cfg.detector, rng);
        Ok(Self {
            cfg,
            backbone,
            neck,
            rpn,
            head,
        })
    }

    /// Feature stride in pixels.
    pub fn stride(&self) -> f64 {
        self.cfg.backbone.stride as f64
    }

    pub fn anchors(&self, grid: (usize, usize)) -> Vec<Anchor> {
        let d = &self.cfg.detector;
        generate_anchors(grid, self.stride(), &d.anchor_areas, &d.aspect_ratios)
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<(usize, usize)> {
        match image.shape() {
            &[h, w, 3] if (h, w) == self.cfg.image_size || !self.cfg.concat_attn => Ok((h, w)),
            s => Err(Error::invalid(format!(
                "image shape {s:?} does not fit a model built for {:?}",
                self.cfg.image_size
            ))),
        }
    }

    /// Neck output for `image` and its grid.
    pub fn features(&self, image: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, (usize, usize))> {
        self.check_image(image)?;
        let out = self.backbone.forward(image)?;
        let fm = to_spatial(&out, self.cfg.output_mode, self.cfg.concat_attn)?;
        Ok((self.neck.forward(&fm, mode)?, out.grid))
    }

    /// Training forward pass on one image, with batch norm in train mode.
    /// `labels` are 0-based foreground categories.
    pub fn train_loss(
        &self,
        image: &Tensor<T>,
        boxes: &[BBox],
        labels: &[usize],
        rng: &mut Rng,
    ) -> Result<DetectionLoss<T>> {
        if boxes.len() != labels.len() {
            return Err(Error::invalid("boxes and labels differ in length"));
        }
        if labels.iter().any(|&l| l >= self.cfg.detector.num_classes) {
            return Err(Error::invalid("label outside the configured classes"));
        }
        let (h, w) = self.check_image(image)?;
        let d = &self.cfg.detector;
        let (fm, grid) = self.features(image, Mode::Train)?;
        let rpn_out = self.rpn.forward(&fm)?;
        let anchors = self.anchors(grid);
        let anchor_labels = assign_rpn_targets(&anchors, boxes, d, rng);
        let scores: Vec<f64> = rpn_out.objectness.data().iter().map(|v| v.to_f64c()).collect();
        let offsets: Vec<_> = (0..anchors.len()).map(|i| rpn_out.offsets_at(i)).collect();
        let proposals: Vec<BBox> = select_proposals(&scores, &offsets, &anchors, (h, w), true, d)?
            .into_iter()
            .map(|(b, _)| b)
            .collect();
        let targets = assign_head_targets(&proposals, boxes, labels, d, rng)?;
        let head_out = if targets.is_empty() {
            None
        } else {
            let regions: Vec<BBox> = targets.iter().map(|t| t.proposal).collect();
            Some(self.head.forward(&fm, &regions, self.stride())?)
        };
        detection_loss(
            &rpn_out,
            &anchor_labels,
            &anchors,
            boxes,
            head_out.as_ref(),
            &targets,
            d.huber_beta,
        )
    }

    /// Inference up to the head, without graph recording. Batch norm uses
    /// running statistics.
    pub fn predict(&self, image: &Tensor<T>) -> Result<HeadPredictions> {
        let (h, w) = self.check_image(image)?;
        no_grad(|| {
            let d = &self.cfg.detector;
            let (fm, grid) = self.features(image, Mode::Eval)?;
            let rpn_out = self.rpn.forward(&fm)?;
            let anchors = self.anchors(grid);
            let scores: Vec<f64> = rpn_out.objectness.data().iter().map(|v| v.to_f64c()).collect();
            let offsets: Vec<_> = (0..anchors.len()).map(|i| rpn_out.offsets_at(i)).collect();
            let proposals: Vec<BBox> = select_proposals(&scores, &offsets, &anchors, (h, w), false, d)?
                .into_iter()
                .map(|(b, _)| b)
                .collect();
            if proposals.is_empty() {
                return Ok(HeadPredictions {
                    proposals,
                    class_logits: Vec::new(),
                    box_deltas: Vec::new(),
                    num_classes: d.num_classes,
                    image_size: (h, w),
                });
            }
            let out = self.head.forward(&fm, &proposals, self.stride())?;
            HeadPredictions::new(proposals, &out, (h, w))
        })
    }

    pub fn detect(&self, image: &Tensor<T>) -> Result<Vec<Detection>> {
        postprocess(&self.predict(image)?, &self.cfg.detector)
    }
}

impl<T: Scalar> Parameterized<T> for Detector<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.backbone.visit_params(f);
        self.neck.visit_params(f);
        self.rpn.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.backbone.visit_params_mut(f);
        self.neck.visit_params_mut(f);
        self.rpn.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn tiny(num_classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::desk(num_classes);
        cfg.backbone.embed_dim = 16;
        cfg.backbone.num_heads = 2;
        cfg.backbone.pretrained_grid = (4, 4);
        cfg.neck.out_channels = 8;
        cfg.detector.head_hidden = 16;
        cfg.image_size = (48, 40);
        cfg
    }

    fn image(cfg: &ModelConfig, seed: u64) -> Tensor<f32> {
        let (h, w) = cfg.image_size;
        let mut rng = Rng::new(seed);
        Tensor::from_vec((0..h * w * 3).map(|_| rng.uniform() as f32).collect(), &[h, w, 3]).unwrap()
    }

    #[test]
    fn names_are_unique() {
        let m = Detector::<f32>::new(tiny(3), &mut Rng::new(0)).unwrap();
        let names = m.param_names();
        let set: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }

    #[test]
    fn training_pass_reaches_every_trainable_parameter() {
        let cfg = tiny(2);
        let m = Detector::<f32>::new(cfg.clone(), &mut Rng::new(1)).unwrap();
        let boxes = [
            BBox::new(4.0, 6.0, 20.0, 30.0).unwrap(),
            BBox::new(22.0, 10.0, 38.0, 44.0).unwrap(),
        ];
        let loss = m
            .train_loss(&image(&cfg, 2), &boxes, &[0, 1], &mut Rng::new(3))
            .unwrap();
        assert!(loss.total.item().is_finite());
        assert!((loss.total.item() as f64 - loss.components.total()).abs() < 1e-4);
        loss.total.backward().unwrap();
        m.visit_params(&mut |p| {
            if p.kind != ParamKind::Buffer {
                let g = p.value.grad().unwrap_or_default();
                assert!(g.iter().any(|v| *v != 0.0), "{} has no gradient", p.name);
            }
        });
    }

    #[test]
    fn prediction_is_deterministic_and_bounded() {
        let cfg = tiny(3);
        let m = Detector::<f32>::new(cfg.clone(), &mut Rng::new(4)).unwrap();
        let img = image(&cfg, 5);
        let a = m.predict(&img).unwrap();
        assert_eq!(a, m.predict(&img).unwrap());
        let dets = m.detect(&img).unwrap();
        assert!(dets.len() <= 100);
        for d in &dets {
            assert!(d.score >= 0.05 && d.score <= 1.0);
            assert!(d.bbox.x1 >= 0.0 && d.bbox.x2 <= 40.0 && d.bbox.y1 >= 0.0 && d.bbox.y2 <= 48.0);
        }
    }

    #[test]
    fn ablation_variants_build_with_documented_channels() {
        for (mode, attn, blocks, want) in [
            (OutputMode::Final, false, 0, 16),
            (OutputMode::All, false, 4, 32),
            (OutputMode::Final, true, 1, 16 + 30),
        ] {
            let mut cfg = tiny(1);
            cfg.output_mode = mode;
            cfg.concat_attn = attn;
            cfg.neck.num_blocks = blocks;
            assert_eq!(cfg.spatial_channels().unwrap(), want);
            let m = Detector::<f32>::new(cfg.clone(), &mut Rng::new(6)).unwrap();
            assert_eq!(m.neck.in_channels(), want);
            let loss = m
                .train_loss(
                    &image(&cfg, 7),
                    &[BBox::new(3.0, 3.0, 25.0, 20.0).unwrap()],
                    &[0],
                    &mut Rng::new(8),
                )
                .unwrap();
            assert!(loss.total.item().is_finite());
        }
    }
}
