//! Average-precision metrics, NMS sweeps and overdetection counts.

mod coco;
mod sweep;

pub use coco::{
    average_precision, coco_suite, iou_thresholds, match_detections, match_image, MatchOutcome, AREA_ALL, AREA_LARGE,
    AREA_MEDIUM, AREA_SMALL, MAX_DETS,
};
pub use sweep::{
    detections_at, nms_sensitivity_sweep, overdetection_stats, predict_dataset, CachedPrediction, OverdetectionStats,
};

use crate::error::{Error, Result};

/// COCO-style metrics in `[0, 1]`. `None` marks a metric with no ground
/// truth to measure against.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
}

pub const METRICS_HEADER: &str = "threshold,ap,ap50,ap75,ap_s,ap_m,ap_l";

impl MetricsReport {
    pub fn values(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("AP_S", self.ap_s),
            ("AP_M", self.ap_m),
            ("AP_L", self.ap_l),
        ]
    }

    /// CSV row; absent metrics are empty fields.
    pub fn csv_row(&self, threshold: f64) -> String {
        let mut row = format!("{threshold}");
        for (_, v) in self.values() {
            row.push(',');
            if let Some(v) = v {
                row.push_str(&format!("{v:.6}"));
            }
        }
        row
    }

    /// Single-row CSV, header included.
    pub fn to_csv(&self, threshold: f64) -> String {
        format!("{METRICS_HEADER}\n{}\n", self.csv_row(threshold))
    }

    /// Human-readable table, values x100.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut body = String::new();
        for (name, v) in self.values() {
            head.push_str(&format!("{name:>7}"));
            match v {
                Some(v) => body.push_str(&format!("{:>7.1}", v * 100.0)),
                None => body.push_str(&format!("{:>7}", "-")),
            }
        }
        format!("{head}\n{body}\n")
    }
}

/// AP metrics at each final-NMS threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub thresholds: Vec<f64>,
    pub reports: Vec<MetricsReport>,
}

impl SweepCurve {
    pub fn new(thresholds: Vec<f64>, reports: Vec<MetricsReport>) -> Result<Self> {
        check_thresholds(&thresholds)?;
        if thresholds.len() != reports.len() {
            return Err(Error::invalid("one report per threshold"));
        }
        Ok(Self { thresholds, reports })
    }

    /// `ap` at each threshold.
    pub fn ap_at_threshold(&self) -> Vec<Option<f64>> {
        self.reports.iter().map(|r| r.ap).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for (t, r) in self.thresholds.iter().zip(&self.reports) {
            s.push_str(&r.csv_row(*t));
            s.push('\n');
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>9}", "NMS IoU");
        for (name, _) in MetricsReport::default().values() {
            s.push_str(&format!("{name:>7}"));
        }
        s.push('\n');
        for (t, r) in self.thresholds.iter().zip(&self.reports) {
            s.push_str(&format!("{t:>9.2}"));
            for (_, v) in r.values() {
                match v {
                    Some(v) => s.push_str(&format!("{:>7.1}", v * 100.0)),
                    None => s.push_str(&format!("{:>7}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::invalid("no thresholds given"));
    }
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid(format!("thresholds {thresholds:?} must lie in [0, 1]")));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "thresholds {thresholds:?} are not strictly increasing"
        )));
    }
    Ok(())
}
