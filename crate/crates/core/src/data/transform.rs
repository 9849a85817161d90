//! Aspect-preserving rescaling and horizontal flips.

use super::{Image, Sample};
use crate::detection::BBox;
use crate::numerics::Rng;

/// A rescaled sample and the factor applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resized {
    pub sample: Sample,
    pub scale: f64,
}

impl Resized {
    /// Maps a box in resized coordinates back to the original image.
    pub fn unscale(&self, b: &BBox) -> BBox {
        b.scaled(1.0 / self.scale)
    }
}

/// Bilinear resampling with pixel centers at half-integer coordinates.
fn resample(img: &Image, oh: usize, ow: usize) -> Image {
    if (oh, ow) == (img.height, img.width) {
        return img.clone();
    }
    let (sy, sx) = (img.height as f64 / oh as f64, img.width as f64 / ow as f64);
    let axis = |o: usize, s: f64, n: usize| {
        let p = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (p - i0 as f64) as f32)
    };
    let mut data = Vec::with_capacity(oh * ow * 3);
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for x in 0..ow {
            let (x0, x1, fx) = axis(x, sx, img.width);
            let (a, b, c, d) = (
                img.pixel(y0, x0),
                img.pixel(y0, x1),
                img.pixel(y1, x0),
                img.pixel(y1, x1),
            );
            for k in 0..3 {
                let top = a[k] + (b[k] - a[k]) * fx;
                let bottom = c[k] + (d[k] - c[k]) * fx;
                data.push(top + (bottom - top) * fy);
            }
        }
    }
    Image {
        height: oh,
        width: ow,
        data,
    }
}

/// Scales so the shorter side becomes `target`, unless that would push the
/// longer side past `max_size`, in which case the longer side becomes
/// `max_size`. Boxes are scaled by the same factor and clipped.
pub fn resize_keep_aspect(sample: &Sample, target: usize, max_size: usize) -> Resized {
    let (h, w) = (sample.image.height as f64, sample.image.width as f64);
    let scale = (target as f64 / h.min(w)).min(max_size as f64 / h.max(w));
    let oh = ((h * scale).round() as usize).max(1);
    let ow = ((w * scale).round() as usize).max(1);
    let image = resample(&sample.image, oh, ow);
    let mut boxes = Vec::with_capacity(sample.boxes.len());
    let mut labels = Vec::with_capacity(sample.boxes.len());
    for (b, &l) in sample.boxes.iter().zip(&sample.labels) {
        let s = b.scaled(scale).clip(ow as f64, oh as f64);
        if s.width() > 0.0 && s.height() > 0.0 {
            boxes.push(s);
            labels.push(l);
        }
    }
    Resized {
        sample: Sample {
            image,
            boxes,
            labels,
            ..sample.clone()
        },
        scale,
    }
}

/// Mirrors columns; box x-extents map `(x1, x2) -> (W - x2, W - x1)`.
pub fn flip_horizontal(sample: &Sample) -> Sample {
    let img = &sample.image;
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(y, img.width - 1 - x, img.pixel(y, x));
        }
    }
    let w = img.width as f64;
    Sample {
        image: out,
        boxes: sample
            .boxes
            .iter()
            .map(|b| BBox {
                x1: w - b.x2,
                x2: w - b.x1,
                ..*b
            })
            .collect(),
        ..sample.clone()
    }
}

/// Flips with probability one half. Returns whether the flip happened.
pub fn hflip(sample: &Sample, rng: &mut Rng) -> (Sample, bool) {
    if rng.bernoulli(0.5) {
        (flip_horizontal(sample), true)
    } else {
        (sample.clone(), false)
    }
}
