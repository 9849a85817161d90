//! Box geometry: corner boxes, anchors, the offset parameterization between
//! them, IoU and greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Box with strictly positive extents.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if !(x2 > x1 && y2 > y1) || !b.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Clamped into `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    pub fn as_anchor(&self) -> Anchor {
        let (x, y) = self.center();
        Anchor {
            x,
            y,
            w: self.width(),
            h: self.height(),
        }
    }
}

/// Reference box given by center and extents. May extend past the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn to_box(&self) -> BBox {
        BBox::from_center(self.x, self.y, self.w, self.h)
    }
}

/// `(t_x, t_y, t_w, t_h)` encoding of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxOffsets {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxOffsets {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            tx: v[0],
            ty: v[1],
            tw: v[2],
            th: v[3],
        }
    }
}

/// One anchor per (cell, area, ratio), cells row-major, then areas, then ratios.
///
/// A ratio is `w / h`; each anchor has exactly its configured area.
pub fn generate_anchors(grid: (usize, usize), stride: f64, areas: &[f64], ratios: &[f64]) -> Vec<Anchor> {
    let shapes: Vec<(f64, f64)> = areas
        .iter()
        .flat_map(|&a| ratios.iter().map(move |&r| ((a * r).sqrt(), (a / r).sqrt())))
        .collect();
    let mut anchors = Vec::with_capacity(grid.0 * grid.1 * shapes.len());
    for r in 0..grid.0 {
        for c in 0..grid.1 {
            let (x, y) = ((c as f64 + 0.5) * stride, (r as f64 + 0.5) * stride);
            anchors.extend(shapes.iter().map(|&(w, h)| Anchor { x, y, w, h }));
        }
    }
    anchors
}

pub fn encode_box(gt: &BBox, a: &Anchor) -> Result<BoxOffsets> {
    let (w, h) = (gt.width(), gt.height());
    if !(w > 0.0 && h > 0.0 && a.w > 0.0 && a.h > 0.0) {
        return Err(Error::invalid(format!(
            "encode_box: non-positive extent ({gt:?}, {a:?})"
        )));
    }
    let (x, y) = gt.center();
    Ok(BoxOffsets {
        tx: (x - a.x) / a.w,
        ty: (y - a.y) / a.h,
        tw: (w / a.w).ln(),
        th: (h / a.h).ln(),
    })
}

pub fn decode_box(t: &BoxOffsets, a: &Anchor) -> Result<BBox> {
    if !t.as_array().iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(format!("decode_box: non-finite offsets {t:?}")));
    }
    let w = a.w * t.tw.exp();
    let h = a.h * t.th.exp();
    if !w.is_finite() || !h.is_finite() {
        return Err(Error::numeric(format!("decode_box: extent overflow for {t:?}")));
    }
    Ok(BBox::from_center(t.tx * a.w + a.x, t.ty * a.h + a.y, w, h))
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order
}

/// Greedy NMS. Keeps the best remaining box and drops every remaining box
/// whose IoU with it exceeds `iou_threshold`. Returns kept indices in
/// descending score order.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes and scores differ in length");
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    let order = score_order(scores);
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}
