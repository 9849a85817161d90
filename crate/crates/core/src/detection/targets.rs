//! Training-target assignment for the RPN and the box head.

use super::boxes::{encode_box, iou, Anchor, BBox, BoxOffsets};
use super::config::DetectorConfig;
use crate::error::Result;
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Labels every anchor, then subsamples to at most `cfg.rpn_batch`
/// non-ignored anchors with at most `cfg.rpn_pos_fraction` positives.
///
/// Positive: IoU >= `rpn_fg_iou` with some box, or the best anchor (ties
/// included) for some box. Negative: best IoU < `rpn_bg_iou`.
pub fn assign_rpn_targets(
    anchors: &[Anchor],
    gt_boxes: &[BBox],
    cfg: &DetectorConfig,
    rng: &mut Rng,
) -> Vec<AnchorLabel> {
    let anchor_boxes: Vec<BBox> = anchors.iter().map(Anchor::to_box).collect();
    let mut labels = Vec::with_capacity(anchors.len());
    let mut best_per_gt = vec![0.0f64; gt_boxes.len()];
    let mut matches = Vec::with_capacity(anchors.len());
    for ab in &anchor_boxes {
        let mut best = (0.0, usize::MAX);
        for (g, gt) in gt_boxes.iter().enumerate() {
            let v = iou(ab, gt);
            if v > best.0 || best.1 == usize::MAX {
                best = (v, g);
            }
            best_per_gt[g] = best_per_gt[g].max(v);
        }
        matches.push(best);
        labels.push(if best.1 != usize::MAX && best.0 >= cfg.rpn_fg_iou {
            AnchorLabel::Positive(best.1)
        } else if best.1 == usize::MAX || best.0 < cfg.rpn_bg_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        });
    }
    // Rescue: each box's best anchors are positive even below the threshold.
    for (a, ab) in anchor_boxes.iter().enumerate() {
        for (g, gt) in gt_boxes.iter().enumerate() {
            if best_per_gt[g] > 0.0 && iou(ab, gt) == best_per_gt[g] {
                labels[a] = AnchorLabel::Positive(matches[a].1);
                break;
            }
        }
    }
    subsample(&mut labels, cfg.rpn_batch, cfg.rpn_pos_fraction, rng);
    labels
}

/// Keeps a random subset of positives (up to `fraction * batch`) and fills the
/// rest of the batch with random negatives; everything else becomes Ignore.
fn subsample(labels: &mut [AnchorLabel], batch: usize, fraction: f64, rng: &mut Rng) {
    let pos: Vec<usize> = (0..labels.len())
        .filter(|&i| matches!(labels[i], AnchorLabel::Positive(_)))
        .collect();
    let neg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == AnchorLabel::Negative)
        .collect();
    let max_pos = (batch as f64 * fraction) as usize;
    let keep_pos = rng.sample_without_replacement(&pos, max_pos);
    let keep_neg = rng.sample_without_replacement(&neg, batch - keep_pos.len());
    let mut keep = vec![false; labels.len()];
    keep_pos.iter().chain(&keep_neg).for_each(|&i| keep[i] = true);
    for (l, k) in labels.iter_mut().zip(keep) {
        if !k {
            *l = AnchorLabel::Ignore;
        }
    }
}

/// A sampled region for the box head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadTarget {
    pub proposal: BBox,
    /// 0 is background, `k + 1` is foreground category `k`.
    pub class: usize,
    /// Encoding of the matched box relative to the proposal (foreground only).
    pub offsets: Option<BoxOffsets>,
}

/// Appends the ground-truth boxes to the proposals, labels each region as
/// foreground (best IoU >= `head_fg_iou`, boundary inclusive) or background,
/// and samples `head_batch` regions with at most `head_fg_fraction`
/// foreground. Sampled regions are returned in proposal order.
pub fn assign_head_targets(
    proposals: &[BBox],
    gt_boxes: &[BBox],
    gt_labels: &[usize],
    cfg: &DetectorConfig,
    rng: &mut Rng,
) -> Result<Vec<HeadTarget>> {
    let regions: Vec<BBox> = proposals.iter().chain(gt_boxes).copied().collect();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut assigned = Vec::with_capacity(regions.len());
    for (i, r) in regions.iter().enumerate() {
        let best =
            gt_boxes
                .iter()
                .enumerate()
                .map(|(g, gt)| (iou(r, gt), g))
                .fold(None, |acc: Option<(f64, usize)>, x| match acc {
                    Some(a) if a.0 >= x.0 => Some(a),
                    _ => Some(x),
                });
        match best {
            Some((v, g)) if v >= cfg.head_fg_iou => {
                fg.push(i);
                assigned.push(Some(g));
            }
            _ => {
                bg.push(i);
                assigned.push(None);
            }
        }
    }
    let max_fg = (cfg.head_batch as f64 * cfg.head_fg_fraction) as usize;
    let keep_fg = rng.sample_without_replacement(&fg, max_fg);
    let keep_bg = rng.sample_without_replacement(&bg, cfg.head_batch - keep_fg.len());
    let mut keep: Vec<usize> = keep_fg.into_iter().chain(keep_bg).collect();
    keep.sort_unstable();
    keep.into_iter()
        .map(|i| {
            let r = regions[i];
            Ok(match assigned[i] {
                Some(g) => HeadTarget {
                    proposal: r,
                    class: gt_labels[g] + 1,
                    offsets: Some(encode_box(&gt_boxes[g], &r.as_anchor())?),
                },
                None => HeadTarget {
                    proposal: r,
                    class: 0,
                    offsets: None,
                },
            })
        })
        .collect()
}
