//! Deterministic scenes of filled rectangles, disks and triangles.

use std::fmt;
use std::str::FromStr;

use super::{Category, Dataset, Image, Sample};
use crate::config::KeyValues;
use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Triangle];

    /// Category id used in manifests.
    pub fn category_id(self) -> u64 {
        self as u64 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Disk => "disk",
            ShapeKind::Triangle => "triangle",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown shape `{s}` (rectangle, disk, triangle)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_images: usize,
    /// Square image side in pixels.
    pub image_size: usize,
    /// Inclusive range of shapes per image.
    pub shapes_per_image: (usize, usize),
    pub shape_kinds: Vec<ShapeKind>,
    /// Inclusive range of shape extents in pixels.
    pub size_range: (usize, usize),
    pub seed: u64,
}

impl SyntheticSpec {
    /// 20 images of 96x96 with 1-3 shapes of 16-40 pixels, all three kinds.
    pub fn desk(seed: u64) -> Self {
        Self {
            num_images: 20,
            image_size: 96,
            shapes_per_image: (1, 3),
            shape_kinds: ShapeKind::ALL.to_vec(),
            size_range: (16, 40),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (smin, smax) = self.size_range;
        if smin == 0 || smin > smax {
            return Err(Error::invalid(format!("size range {smin}..{smax} is empty or zero")));
        }
        if smax > self.image_size {
            return Err(Error::invalid(format!(
                "shape size {smax} exceeds the {0}x{0} image",
                self.image_size
            )));
        }
        if self.shapes_per_image.0 > self.shapes_per_image.1 {
            return Err(Error::invalid("shapes_per_image range is empty"));
        }
        if self.shape_kinds.is_empty() {
            return Err(Error::invalid("no shape kinds selected"));
        }
        Ok(())
    }

    /// Reads `key = value` text; keys as in [`SyntheticSpec::to_config_text`],
    /// all optional with [`SyntheticSpec::desk`] defaults.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let d = Self::desk(0);
        let spec = Self {
            num_images: kv.take_or("num_images", d.num_images)?,
            image_size: kv.take_or("image_size", d.image_size)?,
            shapes_per_image: kv.take_pair("shapes_per_image")?.unwrap_or(d.shapes_per_image),
            shape_kinds: kv.take_list("shape_kinds")?.unwrap_or(d.shape_kinds),
            size_range: kv.take_pair("size_range")?.unwrap_or(d.size_range),
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_text(&self) -> String {
        let kinds: Vec<&str> = self.shape_kinds.iter().map(|k| k.name()).collect();
        format!(
            "num_images = {}\nimage_size = {}\nshapes_per_image = {},{}\nshape_kinds = {}\nsize_range = {},{}\nseed = {}\n",
            self.num_images,
            self.image_size,
            self.shapes_per_image.0,
            self.shapes_per_image.1,
            kinds.join(","),
            self.size_range.0,
            self.size_range.1,
            self.seed
        )
    }
}

/// Pixels `(y, x)` covered by a shape placed in the `w x h` cell at
/// `(x0, y0)`, clipped to a `side x side` image. A pixel is covered when its
/// center lies inside the shape.
pub fn render_mask(kind: ShapeKind, x0: usize, y0: usize, w: usize, h: usize, side: usize) -> Vec<(usize, usize)> {
    let (fx, fy, fw, fh) = (x0 as f64, y0 as f64, w as f64, h as f64);
    let inside = |px: f64, py: f64| match kind {
        ShapeKind::Rectangle => true,
        ShapeKind::Disk => {
            let (cx, cy, r) = (fx + fw / 2.0, fy + fh / 2.0, fw.min(fh) / 2.0);
            (px - cx).powi(2) + (py - cy).powi(2) <= r * r
        }
        ShapeKind::Triangle => {
            // Apex at top center, base along the bottom edge.
            let t = (py - fy) / fh;
            let half = 0.5 * fw * t;
            let cx = fx + fw / 2.0;
            px >= cx - half && px <= cx + half
        }
    };
    let mut px = Vec::new();
    for y in y0..(y0 + h).min(side) {
        for x in x0..(x0 + w).min(side) {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                px.push((y, x));
            }
        }
    }
    px
}

fn tight_box(mask: &[(usize, usize)]) -> Option<BBox> {
    let ymin = mask.iter().map(|p| p.0).min()?;
    let ymax = mask.iter().map(|p| p.0).max()?;
    let xmin = mask.iter().map(|p| p.1).min()?;
    let xmax = mask.iter().map(|p| p.1).max()?;
    BBox::new(xmin as f64, ymin as f64, xmax as f64 + 1.0, ymax as f64 + 1.0).ok()
}

fn random_color(rng: &mut Rng, lo: usize, hi: usize) -> [f32; 3] {
    [0; 3].map(|_: u8| rng.int_inclusive(lo, hi) as f32 / 255.0)
}

/// Renders `spec.num_images` scenes. Colors are 8-bit levels, so images
/// survive PPM round trips exactly. Boxes are the tight boxes of each
/// shape's full mask (later shapes may occlude earlier ones).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut kinds = spec.shape_kinds.clone();
    kinds.sort();
    kinds.dedup();
    let categories = kinds
        .iter()
        .map(|k| Category {
            id: k.category_id(),
            name: k.name().to_string(),
        })
        .collect();
    let mut rng = Rng::new(spec.seed);
    let side = spec.image_size;
    let mut samples = Vec::with_capacity(spec.num_images);
    for i in 0..spec.num_images {
        // Dark background, bright fills.
        let mut image = Image::filled(side, side, random_color(&mut rng, 0, 90));
        let count = rng.int_inclusive(spec.shapes_per_image.0, spec.shapes_per_image.1);
        let mut boxes = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let label = rng.int_inclusive(0, kinds.len() - 1);
            let kind = kinds[label];
            let w = rng.int_inclusive(spec.size_range.0, spec.size_range.1);
            let h = match kind {
                ShapeKind::Disk => w,
                _ => rng.int_inclusive(spec.size_range.0, spec.size_range.1),
            };
            let x0 = rng.int_inclusive(0, side - w);
            let y0 = rng.int_inclusive(0, side - h);
            let color = random_color(&mut rng, 150, 255);
            let mask = render_mask(kind, x0, y0, w, h, side);
            let Some(b) = tight_box(&mask) else { continue };
            for &(y, x) in &mask {
                image.set_pixel(y, x, color);
            }
            boxes.push(b);
            labels.push(label);
        }
        samples.push(Sample {
            image_id: i as u64 + 1,
            file_name: format!("img_{:05}.ppm", i + 1),
            image,
            boxes,
            labels,
        });
    }
    Ok(Dataset { categories, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::desk(7);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = generate_synthetic(&SyntheticSpec::desk(8)).unwrap();
        assert_ne!(
            generate_synthetic(&spec).unwrap().samples[0].image,
            other.samples[0].image
        );
    }

    #[test]
    fn single_rectangle_box_is_the_drawn_rectangle() {
        let spec = SyntheticSpec {
            num_images: 5,
            shapes_per_image: (1, 1),
            shape_kinds: vec![ShapeKind::Rectangle],
            ..SyntheticSpec::desk(3)
        };
        let ds = generate_synthetic(&spec).unwrap();
        for s in &ds.samples {
            assert_eq!(s.boxes.len(), 1);
            let b = s.boxes[0];
            let fill = s.image.pixel(b.y1 as usize, b.x1 as usize);
            for y in 0..96 {
                for x in 0..96 {
                    let inside = (x as f64) >= b.x1 && (x as f64) < b.x2 && (y as f64) >= b.y1 && (y as f64) < b.y2;
                    assert_eq!(s.image.pixel(y, x) == fill, inside, "pixel ({y}, {x})");
                }
            }
        }
    }

    #[test]
    fn counts_and_bounds() {
        let ds = generate_synthetic(&SyntheticSpec::desk(11)).unwrap();
        assert_eq!(ds.len(), 20);
        let total: usize = ds.samples.iter().map(|s| s.boxes.len()).sum();
        assert!((20..=60).contains(&total));
        for s in &ds.samples {
            assert_eq!(s.boxes.len(), s.labels.len());
            for b in &s.boxes {
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 96.0 && b.y2 <= 96.0);
                assert!(b.width() >= 8.0 && b.height() >= 8.0);
            }
        }
        assert_eq!(
            ds.categories.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
            ["rectangle", "disk", "triangle"]
        );
    }

    #[test]
    fn boxes_are_tight_around_the_shape_masks() {
        for kind in ShapeKind::ALL {
            for (w, h) in [(16, 16), (23, 40), (40, 17)] {
                let mask = render_mask(kind, 10, 20, w, h, 96);
                let b = tight_box(&mask).unwrap();
                // Every box edge touches the mask.
                assert!(mask.iter().any(|p| p.1 as f64 == b.x1) && mask.iter().any(|p| p.1 as f64 + 1.0 == b.x2));
                assert!(mask.iter().any(|p| p.0 as f64 == b.y1) && mask.iter().any(|p| p.0 as f64 + 1.0 == b.y2));
                assert!(b.x1 >= 10.0 && b.x2 <= 10.0 + w as f64 && b.y1 >= 20.0 && b.y2 <= 20.0 + h as f64);
            }
        }
    }

    #[test]
    fn oversize_shapes_are_rejected() {
        let spec = SyntheticSpec {
            size_range: (16, 100),
            ..SyntheticSpec::desk(0)
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_text_round_trip() {
        let spec = SyntheticSpec {
            shape_kinds: vec![ShapeKind::Disk, ShapeKind::Triangle],
            ..SyntheticSpec::desk(42)
        };
        assert_eq!(SyntheticSpec::from_config_text(&spec.to_config_text()).unwrap(), spec);
        assert!(matches!(
            SyntheticSpec::from_config_text("seed = 1\ncolour = red\n"),
            Err(Error::Config { line: 2, .. })
        ));
    }
}
