//! COCO-format annotation manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_ppm, Annotation, Category, Dataset, Sample};
use crate::detection::BBox;
use crate::error::{Error, Result};

/// File name of the manifest written next to the images.
pub const MANIFEST_NAME: &str = "annotations.json";

/// Annotations for a set of images, without pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub categories: Vec<Category>,
    pub images: Vec<Annotation>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Serialize)]
struct CocoFile<'a> {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: &'a [CocoCategory],
}

fn records<T: serde::de::DeserializeOwned>(root: &serde_json::Value, field: &str, context: &str) -> Result<Vec<T>> {
    let arr = root
        .get(field)
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::parse(context, format!("missing `{field}` array")))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| T::deserialize(v).map_err(|e| Error::parse(format!("{context}: {field}[{i}]"), e.to_string())))
        .collect()
}

/// Parses a manifest. COCO `[x, y, w, h]` boxes become corner boxes clipped
/// to the image; crowd regions and boxes left without area are dropped.
/// Category ids are remapped to dense indices in ascending id order.
pub fn parse_coco(text: &str, context: &str) -> Result<AnnotationSet> {
    let root: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))?;
    let images: Vec<CocoImage> = records(&root, "images", context)?;
    let anns: Vec<CocoAnnotation> = records(&root, "annotations", context)?;
    let mut cats: Vec<CocoCategory> = records(&root, "categories", context)?;
    cats.sort_by_key(|c| c.id);
    if let Some(w) = cats.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::parse(context, format!("duplicate category id {}", w[0].id)));
    }
    let dense: BTreeMap<u64, usize> = cats.iter().enumerate().map(|(i, c)| (c.id, i)).collect();

    let mut out: Vec<Annotation> = Vec::with_capacity(images.len());
    let mut by_id = BTreeMap::new();
    for (i, im) in images.into_iter().enumerate() {
        if im.width == 0 || im.height == 0 {
            return Err(Error::parse(format!("{context}: images[{i}]"), "zero image extent"));
        }
        if by_id.insert(im.id, out.len()).is_some() {
            return Err(Error::parse(
                format!("{context}: images[{i}]"),
                format!("duplicate image id {}", im.id),
            ));
        }
        out.push(Annotation {
            image_id: im.id,
            file_name: im.file_name,
            width: im.width,
            height: im.height,
            boxes: Vec::new(),
            labels: Vec::new(),
        });
    }
    for (i, a) in anns.into_iter().enumerate() {
        let ctx = || format!("{context}: annotations[{i}]");
        let &slot = by_id
            .get(&a.image_id)
            .ok_or_else(|| Error::parse(ctx(), format!("unknown image_id {}", a.image_id)))?;
        let &label = dense
            .get(&a.category_id)
            .ok_or_else(|| Error::parse(ctx(), format!("unknown category_id {}", a.category_id)))?;
        let [x, y, w, h] = a.bbox;
        if !a.bbox.iter().all(|v| v.is_finite()) || w < 0.0 || h < 0.0 {
            return Err(Error::parse(ctx(), format!("invalid bbox {:?}", a.bbox)));
        }
        if a.iscrowd != 0 {
            continue;
        }
        let img = &mut out[slot];
        let (iw, ih) = (img.width as f64, img.height as f64);
        let (x1, y1, x2, y2) = (
            x.clamp(0.0, iw),
            y.clamp(0.0, ih),
            (x + w).clamp(0.0, iw),
            (y + h).clamp(0.0, ih),
        );
        if let Ok(b) = BBox::new(x1, y1, x2, y2) {
            img.boxes.push(b);
            img.labels.push(label);
        }
    }
    Ok(AnnotationSet {
        categories: cats.into_iter().map(|c| Category { id: c.id, name: c.name }).collect(),
        images: out,
    })
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coco(&text, &path.display().to_string())
}

/// Manifest plus the PPM images it names, resolved relative to the manifest.
pub fn load_coco_json(path: &Path) -> Result<Dataset> {
    let set = load_annotations(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(set.images.len());
    for a in set.images {
        let image = read_ppm(&dir.join(&a.file_name))?;
        if (image.width, image.height) != (a.width, a.height) {
            return Err(Error::parse(
                a.file_name.clone(),
                format!(
                    "image is {}x{}, manifest says {}x{}",
                    image.width, image.height, a.width, a.height
                ),
            ));
        }
        samples.push(Sample {
            image_id: a.image_id,
            file_name: a.file_name,
            image,
            boxes: a.boxes,
            labels: a.labels,
        });
    }
    Ok(Dataset {
        categories: set.categories,
        samples,
    })
}

/// Serializes annotations as a COCO manifest (pretty-printed, deterministic).
pub fn to_coco_json(set: &AnnotationSet) -> String {
    let categories: Vec<CocoCategory> = set
        .categories
        .iter()
        .map(|c| CocoCategory {
            id: c.id,
            name: c.name.clone(),
        })
        .collect();
    let mut annotations = Vec::new();
    for im in &set.images {
        for (b, &l) in im.boxes.iter().zip(&im.labels) {
            annotations.push(CocoAnnotation {
                id: Some(annotations.len() as u64 + 1),
                image_id: im.image_id,
                category_id: set.categories[l].id,
                bbox: [b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1],
                iscrowd: 0,
                area: Some(b.area()),
            });
        }
    }
    let file = CocoFile {
        images: set
            .images
            .iter()
            .map(|im| CocoImage {
                id: im.image_id,
                file_name: im.file_name.clone(),
                width: im.width,
                height: im.height,
            })
            .collect(),
        annotations,
        categories: &categories,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("manifest serializes");
    s.push('\n');
    s
}
