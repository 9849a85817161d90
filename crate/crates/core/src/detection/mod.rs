//! Box geometry and the two-stage detector: anchors, region proposals,
//! RoI pooling, the box head, target assignment and losses.

mod boxes;
mod config;
mod head;
mod loss;
mod rpn;
mod targets;

use std::fmt::Write as _;

pub use boxes::{decode_box, encode_box, generate_anchors, iou, nms, score_order, Anchor, BBox, BoxOffsets};
pub use config::DetectorConfig;
pub use head::{postprocess, postprocess_at, HeadOutput, HeadPredictions, RoiHead};
pub use loss::{detection_loss, DetectionLoss, LossComponents};
pub use rpn::{clamp_offsets, select_proposals, Rpn, RpnOutput, MAX_LOG_SCALE};
pub use targets::{assign_head_targets, assign_rpn_targets, AnchorLabel, HeadTarget};

use crate::error::{Error, Result};

/// A scored, classified box. `class_id` indexes foreground categories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Header line of the detection record format.
pub const RECORD_HEADER: &str = "image_id,class_id,score,x1,y1,x2,y2";

/// Renders detections as CSV records `image_id,class_id,score,x1,y1,x2,y2`
/// with a header line. Floats use the shortest round-trip representation.
pub fn format_records<'a>(per_image: impl IntoIterator<Item = (u64, &'a [Detection])>) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for (image_id, dets) in per_image {
        for d in dets {
            let b = d.bbox;
            let _ = writeln!(
                out,
                "{image_id},{},{:?},{:?},{:?},{:?},{:?}",
                d.class_id, d.score, b.x1, b.y1, b.x2, b.y2
            );
        }
    }
    out
}

/// Parses the record format back into `(image_id, detection)` pairs in file order.
pub fn parse_records(text: &str) -> Result<Vec<(u64, Detection)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == RECORD_HEADER) {
            continue;
        }
        let ctx = || format!("detection record line {}", n + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                ctx(),
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::parse(ctx(), format!("field {}: {e}", i + 1)))
        };
        let image_id = fields[0]
            .parse::<u64>()
            .map_err(|e| Error::parse(ctx(), format!("image id: {e}")))?;
        let class_id = fields[1]
            .parse::<usize>()
            .map_err(|e| Error::parse(ctx(), format!("class id: {e}")))?;
        let score = num(2)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(ctx(), format!("score {score} outside [0, 1]")));
        }
        let bbox = BBox::new(num(3)?, num(4)?, num(5)?, num(6)?).map_err(|e| Error::parse(ctx(), e.to_string()))?;
        out.push((image_id, Detection { bbox, class_id, score }));
    }
    Ok(out)
}
