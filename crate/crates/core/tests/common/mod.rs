//! Slow, literal reference implementations used as test oracles.

#![allow(dead_code)]

use vitfrcnn::data::Annotation;
use vitfrcnn::detection::{BBox, Detection};

/// IoU computed from `(x, y, w, h)`.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay, aw, ah) = (a.x1, a.y1, a.x2 - a.x1, a.y2 - a.y1);
    let (bx, by, bw, bh) = (b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1);
    let w = (ax + aw).min(bx + bw) - ax.max(bx);
    let h = (ay + ah).min(by + bh) - ay.max(by);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (aw * ah + bw * bh - inter)
}

/// Greedy NMS restated: rank by score (ties by index), then a box survives
/// iff it overlaps no earlier survivor by more than `t`.
pub fn ref_nms(boxes: &[BBox], scores: &[f64], t: f64) -> Vec<usize> {
    let n = boxes.len();
    let mut rank: Vec<usize> = (0..n).collect();
    // Insertion sort, descending score, stable.
    for i in 1..n {
        let mut j = i;
        while j > 0 && scores[rank[j - 1]] < scores[rank[j]] {
            rank.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    for &i in &rank {
        if kept.iter().all(|&k| ref_iou(&boxes[k], &boxes[i]) <= t) {
            kept.push(i);
        }
    }
    kept
}

const AREAS: [(f64, f64); 4] = [(0.0, 1e10), (0.0, 1024.0), (1024.0, 9216.0), (9216.0, 1e10)];

struct Eval {
    scores: Vec<f64>,
    /// Per threshold: matched?
    matched: Vec<Vec<bool>>,
    /// Per threshold: ignored?
    ignored: Vec<Vec<bool>>,
    num_gt: usize,
}

/// One (image, class, area) cell, following the reference evaluator's
/// loop structure.
fn evaluate_img(dets: &[Detection], gts: &[BBox], area: (f64, f64), thresholds: &[f64]) -> Eval {
    let gt_ig: Vec<bool> = gts.iter().map(|g| g.area() < area.0 || g.area() > area.1).collect();
    let mut gt_order: Vec<usize> = (0..gts.len()).filter(|&g| !gt_ig[g]).collect();
    gt_order.extend((0..gts.len()).filter(|&g| gt_ig[g]));
    let gts: Vec<BBox> = gt_order.iter().map(|&g| gts[g]).collect();
    let gt_ig: Vec<bool> = gt_order.iter().map(|&g| gt_ig[g]).collect();

    let mut d_order: Vec<usize> = (0..dets.len()).collect();
    d_order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    d_order.truncate(100);
    let dets: Vec<Detection> = d_order.iter().map(|&d| dets[d]).collect();

    let mut matched = Vec::new();
    let mut ignored = Vec::new();
    for &t in thresholds {
        let mut gtm = vec![false; gts.len()];
        let mut dtm = vec![false; dets.len()];
        let mut dt_ig = vec![false; dets.len()];
        for (di, d) in dets.iter().enumerate() {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: isize = -1;
            for gi in 0..gts.len() {
                if gtm[gi] {
                    continue;
                }
                if m > -1 && !gt_ig[m as usize] && gt_ig[gi] {
                    break;
                }
                let v = ref_iou(&d.bbox, &gts[gi]);
                if v < best {
                    continue;
                }
                best = v;
                m = gi as isize;
            }
            if m == -1 {
                continue;
            }
            dt_ig[di] = gt_ig[m as usize];
            dtm[di] = true;
            gtm[m as usize] = true;
        }
        for (di, d) in dets.iter().enumerate() {
            if !dtm[di] && (d.bbox.area() < area.0 || d.bbox.area() > area.1) {
                dt_ig[di] = true;
            }
        }
        matched.push(dtm);
        ignored.push(dt_ig);
    }
    Eval {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        num_gt: gt_ig.iter().filter(|&&g| !g).count(),
    }
}

/// AP per threshold for one class and area, or `None` without ground truth.
fn accumulate(cells: &[Eval], nt: usize) -> Option<Vec<f64>> {
    let num_gt: usize = cells.iter().map(|c| c.num_gt).sum();
    if num_gt == 0 {
        return None;
    }
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, c) in cells.iter().enumerate() {
        for (di, &s) in c.scores.iter().enumerate() {
            entries.push((s, ci, di));
        }
    }
    // Merge sort on descending score is stable; emulate with an index key.
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| entries[b].0.partial_cmp(&entries[a].0).unwrap().then(a.cmp(&b)));
    let mut out = Vec::new();
    for t in 0..nt {
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut rc = Vec::new();
        let mut pr = Vec::new();
        for &k in &idx {
            let (_, ci, di) = entries[k];
            let m = cells[ci].matched[t][di];
            let ig = cells[ci].ignored[t][di];
            if m && !ig {
                tp += 1;
            }
            if !m && !ig {
                fp += 1;
            }
            rc.push((tp, num_gt));
            pr.push(if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            });
        }
        for i in (1..pr.len()).rev() {
            if pr[i] > pr[i - 1] {
                pr[i - 1] = pr[i];
            }
        }
        let mut total = 0.0;
        for r in 0..=100usize {
            // First position whose recall reaches r/100, compared exactly.
            if let Some(p) = rc.iter().position(|&(tp, n)| 100 * tp >= r * n) {
                total += pr[p];
            }
        }
        out.push(total / 101.0);
    }
    Some(out)
}

/// `[ap, ap50, ap75, ap_s, ap_m, ap_l]`.
pub fn ref_coco(dets: &[(u64, Detection)], gts: &[Annotation]) -> [Option<f64>; 6] {
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut images: Vec<u64> = gts.iter().map(|a| a.image_id).collect();
    images.sort();
    images.dedup();
    let mut classes: Vec<usize> = gts.iter().flat_map(|a| a.labels.iter().copied()).collect();
    classes.sort();
    classes.dedup();

    let mut per_area: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
    for (ai, &area) in AREAS.iter().enumerate() {
        for &c in &classes {
            let cells: Vec<Eval> = images
                .iter()
                .map(|&img| {
                    let d: Vec<Detection> = dets
                        .iter()
                        .filter(|(i, d)| *i == img && d.class_id == c)
                        .map(|(_, d)| *d)
                        .collect();
                    let g: Vec<BBox> = gts
                        .iter()
                        .filter(|a| a.image_id == img)
                        .flat_map(|a| a.boxes.iter().zip(&a.labels))
                        .filter(|(_, &l)| l == c)
                        .map(|(b, _)| *b)
                        .collect();
                    evaluate_img(&d, &g, area, &thresholds)
                })
                .collect();
            if let Some(aps) = accumulate(&cells, thresholds.len()) {
                per_area[ai].push(aps);
            }
        }
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let all = &per_area[0];
    [
        mean(all.iter().flatten().copied().collect()),
        mean(all.iter().map(|a| a[0]).collect()),
        mean(all.iter().map(|a| a[5]).collect()),
        mean(per_area[1].iter().flatten().copied().collect()),
        mean(per_area[2].iter().flatten().copied().collect()),
        mean(per_area[3].iter().flatten().copied().collect()),
    ]
}
