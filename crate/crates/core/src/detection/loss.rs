//! Joint RPN and head training loss.

use super::boxes::{encode_box, Anchor, BBox};
use super::head::HeadOutput;
use super::rpn::RpnOutput;
use super::targets::{AnchorLabel, HeadTarget};
use crate::error::{Error, Result};
use crate::numerics::{bce_with_logits_sum, cross_entropy_sum, huber_sum, lit, ops, Scalar, Tensor};

/// Scalar values of the four loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub rpn_cls: f64,
    pub rpn_box: f64,
    pub head_cls: f64,
    pub head_box: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.rpn_cls + self.rpn_box + self.head_cls + self.head_box
    }

    pub fn add(&mut self, other: &Self) {
        self.rpn_cls += other.rpn_cls;
        self.rpn_box += other.rpn_box;
        self.head_cls += other.head_cls;
        self.head_box += other.head_box;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rpn_cls: self.rpn_cls * s,
            rpn_box: self.rpn_box * s,
            head_cls: self.head_cls * s,
            head_box: self.head_box * s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectionLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub components: LossComponents,
}

/// Sum of four terms, each normalized by its stage's sample count:
/// objectness BCE over sampled anchors, Huber over positive anchors'
/// offsets, cross-entropy over sampled regions and Huber over foreground
/// regions' offsets for their matched class. A term with no samples is a
/// constant 0.
///
/// `head` may be `None` only when `head_targets` is empty.
pub fn detection_loss<T: Scalar>(
    rpn: &RpnOutput<T>,
    anchor_labels: &[AnchorLabel],
    anchors: &[Anchor],
    gt_boxes: &[BBox],
    head: Option<&HeadOutput<T>>,
    head_targets: &[HeadTarget],
    beta: f64,
) -> Result<DetectionLoss<T>> {
    if anchor_labels.len() != anchors.len() || rpn.num_anchors() != anchors.len() {
        return Err(Error::invalid(
            "detection_loss: anchor labels not aligned with predictions",
        ));
    }
    let beta: T = lit(beta);
    let zero = || Tensor::scalar(T::zero());

    let mut cls_picks = Vec::new();
    let mut box_picks = Vec::new();
    for (i, label) in anchor_labels.iter().enumerate() {
        match *label {
            AnchorLabel::Positive(g) => {
                cls_picks.push((i, T::one()));
                let t = encode_box(&gt_boxes[g], &anchors[i])?.as_array();
                box_picks.extend((0..4).map(|j| (4 * i + j, lit::<T>(t[j]))));
            }
            AnchorLabel::Negative => cls_picks.push((i, T::zero())),
            AnchorLabel::Ignore => {}
        }
    }
    let (rpn_cls, rpn_box) = if cls_picks.is_empty() {
        (zero(), zero())
    } else {
        let norm = T::one() / lit::<T>(cls_picks.len() as f64);
        (
            ops::scale(&bce_with_logits_sum(&rpn.objectness, &cls_picks)?, norm),
            ops::scale(&huber_sum(&rpn.offsets, &box_picks, beta)?, norm),
        )
    };

    let (head_cls, head_box) = match (head, head_targets.is_empty()) {
        (_, true) => (zero(), zero()),
        (None, false) => return Err(Error::invalid("detection_loss: head targets without head outputs")),
        (Some(out), false) => {
            let &[n, c] = out.class_logits.shape() else {
                return Err(Error::invalid("detection_loss: class logits must be a matrix"));
            };
            if n != head_targets.len() || out.box_deltas.len() != n * 4 * (c - 1) {
                return Err(Error::invalid(
                    "detection_loss: head targets not aligned with predictions",
                ));
            }
            let labels: Vec<usize> = head_targets.iter().map(|t| t.class).collect();
            let mut picks = Vec::new();
            for (i, t) in head_targets.iter().enumerate() {
                if let (Some(off), true) = (t.offsets, t.class > 0) {
                    let base = i * 4 * (c - 1) + 4 * (t.class - 1);
                    let off = off.as_array();
                    picks.extend((0..4).map(|j| (base + j, lit::<T>(off[j]))));
                }
            }
            let norm = T::one() / lit::<T>(n as f64);
            (
                ops::scale(&cross_entropy_sum(&out.class_logits, &labels)?, norm),
                ops::scale(&huber_sum(&out.box_deltas, &picks, beta)?, norm),
            )
        }
    };

    let components = LossComponents {
        rpn_cls: rpn_cls.item().to_f64c(),
        rpn_box: rpn_box.item().to_f64c(),
        head_cls: head_cls.item().to_f64c(),
        head_box: head_box.item().to_f64c(),
    };
    Ok(DetectionLoss {
        total: ops::sum_scalars(&[rpn_cls, rpn_box, head_cls, head_box])?,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::boxes::BoxOffsets;
    use crate::detection::{DetectorConfig, RoiHead, Rpn};
    use crate::numerics::{check_gradients, Rng};

    fn single_anchor_rpn(offsets: [f64; 4], logit: f64) -> RpnOutput<f64> {
        RpnOutput {
            objectness: Tensor::parameter(vec![logit], &[1]).unwrap(),
            offsets: Tensor::parameter(offsets.to_vec(), &[4]).unwrap(),
        }
    }

    #[test]
    fn perfect_regression_has_zero_huber_terms() {
        let a = Anchor {
            x: 20.0,
            y: 20.0,
            w: 16.0,
            h: 16.0,
        };
        let gt = BBox::new(10.0, 14.0, 31.0, 30.0).unwrap();
        let t = encode_box(&gt, &a).unwrap().as_array();
        let rpn = single_anchor_rpn(t, 0.0);
        let head = HeadOutput {
            class_logits: Tensor::parameter(vec![0.0, 1.0], &[1, 2]).unwrap(),
            box_deltas: Tensor::parameter(t.to_vec(), &[1, 4]).unwrap(),
        };
        let targets = [HeadTarget {
            proposal: a.to_box(),
            class: 1,
            offsets: Some(BoxOffsets::from_slice(&t)),
        }];
        let l = detection_loss(
            &rpn,
            &[AnchorLabel::Positive(0)],
            &[a],
            &[gt],
            Some(&head),
            &targets,
            1.0,
        )
        .unwrap();
        assert_eq!(l.components.rpn_box, 0.0);
        assert_eq!(l.components.head_box, 0.0);
        assert!((l.components.rpn_cls - 2f64.ln()).abs() < 1e-12);
        assert!((l.total.item() - l.components.total()).abs() < 1e-12);
    }

    #[test]
    fn huber_branches() {
        let a = Anchor {
            x: 20.0,
            y: 20.0,
            w: 16.0,
            h: 16.0,
        };
        for (d, want) in [(0.5, 0.125), (2.0, 1.5)] {
            let rpn = single_anchor_rpn([d, 0.0, 0.0, 0.0], 0.0);
            let l = detection_loss(&rpn, &[AnchorLabel::Positive(0)], &[a], &[a.to_box()], None, &[], 1.0).unwrap();
            assert!((l.components.rpn_box - want).abs() < 1e-12);
        }
    }

    #[test]
    fn absent_terms_are_exactly_zero() {
        let a = Anchor {
            x: 20.0,
            y: 20.0,
            w: 16.0,
            h: 16.0,
        };
        let rpn = single_anchor_rpn([0.3, 0.1, -0.2, 0.0], 0.7);
        let l = detection_loss(&rpn, &[AnchorLabel::Ignore], &[a], &[], None, &[], 1.0).unwrap();
        assert_eq!(l.components, LossComponents::default());
        assert_eq!(l.total.item(), 0.0);
        let l = detection_loss(&rpn, &[AnchorLabel::Negative], &[a], &[], None, &[], 1.0).unwrap();
        assert_eq!(l.components.rpn_box, 0.0);
        assert!(l.components.rpn_cls > 0.0);
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let cfg = DetectorConfig::desk(2);
        let rpn = Rpn::<f64>::new(3, 2, &mut rng);
        let mut head_cfg = cfg.clone();
        head_cfg.head_hidden = 6;
        head_cfg.roi_output = (2, 2);
        let head = RoiHead::<f64>::new(3, &head_cfg, &mut rng);
        let fm = Tensor::from_vec((0..4 * 4 * 3).map(|_| rng.normal()).collect(), &[4, 4, 3]).unwrap();
        let anchors = crate::detection::generate_anchors((4, 4), 8.0, &[100.0, 300.0], &[1.0]);
        let gt = [
            BBox::new(3.0, 4.0, 15.0, 20.0).unwrap(),
            BBox::new(16.0, 10.0, 30.0, 29.0).unwrap(),
        ];
        let mut labels = crate::detection::assign_rpn_targets(&anchors, &gt, &cfg, &mut rng);
        for (i, l) in labels.iter_mut().enumerate() {
            if *l == AnchorLabel::Ignore && i % 3 == 0 {
                *l = AnchorLabel::Negative;
            }
        }
        let props = [
            BBox::new(2.0, 2.0, 14.0, 22.0).unwrap(),
            BBox::new(20.0, 1.0, 31.0, 9.0).unwrap(),
        ];
        let targets = crate::detection::assign_head_targets(&props, &gt, &[0, 1], &head_cfg, &mut rng).unwrap();
        assert!(targets.iter().any(|t| t.class > 0) && targets.iter().any(|t| t.class == 0));
        let regions: Vec<BBox> = targets.iter().map(|t| t.proposal).collect();
        let r = check_gradients(
            "detection_loss",
            &[fm, rpn.conv.weight.value.detach(), head.fc1.weight.value.detach()],
            |t| {
                let mut rpn = rpn.clone();
                let mut head = head.clone();
                rpn.conv.weight.value = t[1].clone();
                head.fc1.weight.value = t[2].clone();
                let r = rpn.forward(&t[0])?;
                let h = head.forward(&t[0], &regions, 8.0)?;
                Ok(detection_loss(&r, &labels, &anchors, &gt, Some(&h), &targets, 1.0)?.total)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
    }
}
