//! Samples and datasets: synthetic shape scenes, COCO-format manifests,
//! PPM image IO and the geometric augmentations used in training.

mod coco;
mod image;
mod synthetic;
mod transform;

pub use self::image::{read_ppm, write_ppm, Image};
pub use coco::{load_annotations, load_coco_json, parse_coco, to_coco_json, AnnotationSet, MANIFEST_NAME};
pub use synthetic::{generate_synthetic, render_mask, ShapeKind, SyntheticSpec};
pub use transform::{flip_horizontal, hflip, resize_keep_aspect, Resized};

use std::path::Path;

use crate::detection::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    /// Identifier in the source annotations.
    pub id: u64,
    pub name: String,
}

/// Ground truth for one image, without pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BBox>,
    /// Dense category indices into the owning dataset's category list.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    pub file_name: String,
    pub image: Image,
    pub boxes: Vec<BBox>,
    pub labels: Vec<usize>,
}

impl Sample {
    pub fn annotation(&self) -> Annotation {
        Annotation {
            image_id: self.image_id,
            file_name: self.file_name.clone(),
            width: self.image.width,
            height: self.image.height,
            boxes: self.boxes.clone(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Dense index `i` is `categories[i]`.
    pub categories: Vec<Category>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn annotations(&self) -> AnnotationSet {
        AnnotationSet {
            categories: self.categories.clone(),
            images: self.samples.iter().map(Sample::annotation).collect(),
        }
    }

    /// Writes every image as PPM plus a COCO manifest into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.samples {
            write_ppm(&s.image, &dir.join(&s.file_name))?;
        }
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, to_coco_json(&self.annotations())).map_err(|e| Error::io(&path, e))
    }
}
