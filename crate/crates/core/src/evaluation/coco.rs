//! COCO-style matching and 101-point interpolated average precision.

use std::collections::BTreeMap;

use super::MetricsReport;
use crate::data::Annotation;
use crate::detection::{iou, BBox, Detection};

/// IoU thresholds 0.50:0.05:0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Object-area ranges (inclusive) for all / small / medium / large.
pub const AREA_ALL: (f64, f64) = (0.0, 1e10);
pub const AREA_SMALL: (f64, f64) = (0.0, 32.0 * 32.0);
pub const AREA_MEDIUM: (f64, f64) = (32.0 * 32.0, 96.0 * 96.0);
pub const AREA_LARGE: (f64, f64) = (96.0 * 96.0, 1e10);

/// Detections kept per image and class.
pub const MAX_DETS: usize = 100;

/// Outcome of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Matched an ignored ground truth, or unmatched and outside the area range.
    Ignored,
}

fn outside(area: f64, range: (f64, f64)) -> bool {
    area < range.0 || area > range.1
}

/// Greedy matching of one image's detections of one class, given in
/// descending score order. Ground truth outside `area` is ignored. Each
/// detection takes the still-unmatched ground truth of highest IoU at or
/// above `threshold`; non-ignored ground truth is preferred, and among equal
/// IoUs the later box wins (the reference evaluator's scan order).
pub fn match_image(dets: &[&Detection], gts: &[BBox], threshold: f64, area: (f64, f64)) -> Vec<MatchOutcome> {
    // Non-ignored ground truth first, stable.
    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&g| outside(gts[g].area(), area));
    let ignored: Vec<bool> = order.iter().map(|&g| outside(gts[g].area(), area)).collect();
    let mut taken = vec![false; gts.len()];
    let floor = threshold.min(1.0 - 1e-10);
    dets.iter()
        .map(|d| {
            let mut best = floor;
            let mut m: Option<usize> = None;
            for (pos, &g) in order.iter().enumerate() {
                if taken[pos] {
                    continue;
                }
                if matches!(m, Some(p) if !ignored[p]) && ignored[pos] {
                    break;
                }
                let v = iou(&d.bbox, &gts[g]);
                if v < best {
                    continue;
                }
                best = v;
                m = Some(pos);
            }
            match m {
                Some(pos) => {
                    taken[pos] = true;
                    if ignored[pos] {
                        MatchOutcome::Ignored
                    } else {
                        MatchOutcome::TruePositive
                    }
                }
                None if outside(d.bbox.area(), area) => MatchOutcome::Ignored,
                None => MatchOutcome::FalsePositive,
            }
        })
        .collect()
}

/// TP flags for detections `(image_id, detection)` listed in descending
/// score order: per image and class, each detection matches the unmatched
/// ground truth of highest IoU at or above `threshold`.
pub fn match_detections(dets: &[(u64, Detection)], gts: &[Annotation], threshold: f64) -> Vec<bool> {
    let mut by_group: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, (img, d)) in dets.iter().enumerate() {
        by_group.entry((*img, d.class_id)).or_default().push(i);
    }
    let mut flags = vec![false; dets.len()];
    for ((img, class), idx) in by_group {
        let boxes: Vec<BBox> = gts
            .iter()
            .filter(|a| a.image_id == img)
            .flat_map(|a| a.boxes.iter().zip(&a.labels))
            .filter(|(_, &l)| l == class)
            .map(|(b, _)| *b)
            .collect();
        let group: Vec<&Detection> = idx.iter().map(|&i| &dets[i].1).collect();
        for (&i, o) in idx.iter().zip(match_image(&group, &boxes, threshold, AREA_ALL)) {
            flags[i] = o == MatchOutcome::TruePositive;
        }
    }
    flags
}

/// 101-point interpolated AP of TP flags in descending score order, using
/// the precision envelope. `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let total: f64 = (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / 101.0)
}

struct Group<'a> {
    dets: Vec<&'a Detection>,
    gts: Vec<BBox>,
}

/// AP for each `(class, threshold)` pair at one area range; `None` where
/// the class has no in-range ground truth.
fn per_class_ap(groups: &BTreeMap<(usize, u64), Group>, thresholds: &[f64], area: (f64, f64)) -> Vec<Option<f64>> {
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = groups
            .iter()
            .filter(|(_, g)| !g.gts.is_empty())
            .map(|(k, _)| k.0)
            .collect();
        c.dedup();
        c
    };
    let mut out = Vec::new();
    for &class in &classes {
        let members: Vec<&Group> = groups.range((class, 0)..=(class, u64::MAX)).map(|(_, g)| g).collect();
        let num_gt: usize = members
            .iter()
            .map(|g| g.gts.iter().filter(|b| !outside(b.area(), area)).count())
            .sum();
        for &t in thresholds {
            let mut scored: Vec<(f64, bool)> = Vec::new();
            for g in &members {
                for (d, o) in g.dets.iter().zip(match_image(&g.dets, &g.gts, t, area)) {
                    if o != MatchOutcome::Ignored {
                        scored.push((d.score, o == MatchOutcome::TruePositive));
                    }
                }
            }
            // Stable: equal scores keep image order.
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
            out.push(average_precision(&flags, num_gt));
        }
    }
    out
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// AP, AP50, AP75 and size-bucketed AP averaged over classes with ground
/// truth. Detections are `(image_id, detection)`; at most [`MAX_DETS`] per
/// image and class are considered. Metrics with no ground truth are `None`.
pub fn coco_suite(dets: &[(u64, Detection)], gts: &[Annotation]) -> MetricsReport {
    let known: std::collections::BTreeSet<u64> = gts.iter().map(|a| a.image_id).collect();
    let mut groups: BTreeMap<(usize, u64), Group> = BTreeMap::new();
    for a in gts {
        for (b, &l) in a.boxes.iter().zip(&a.labels) {
            groups
                .entry((l, a.image_id))
                .or_insert_with(|| Group {
                    dets: Vec::new(),
                    gts: Vec::new(),
                })
                .gts
                .push(*b);
        }
    }
    for (img, d) in dets {
        if known.contains(img) {
            groups
                .entry((d.class_id, *img))
                .or_insert_with(|| Group {
                    dets: Vec::new(),
                    gts: Vec::new(),
                })
                .dets
                .push(d);
        }
    }
    for g in groups.values_mut() {
        g.dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        g.dets.truncate(MAX_DETS);
    }
    let ts = iou_thresholds();
    let all = per_class_ap(&groups, &ts, AREA_ALL);
    let at = |k: usize| -> Vec<Option<f64>> { all.iter().skip(k).step_by(ts.len()).copied().collect() };
    MetricsReport {
        ap: mean_defined(&all),
        ap50: mean_defined(&at(0)),
        ap75: mean_defined(&at(5)),
        ap_s: mean_defined(&per_class_ap(&groups, &ts, AREA_SMALL)),
        ap_m: mean_defined(&per_class_ap(&groups, &ts, AREA_MEDIUM)),
        ap_l: mean_defined(&per_class_ap(&groups, &ts, AREA_LARGE)),
    }
}
