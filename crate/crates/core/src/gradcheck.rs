//! Autodiff-vs-finite-difference checks for every differentiable operation
//! of the model, in double precision on small random inputs.

use std::fmt;
use std::str::FromStr;

use crate::backbone::EncoderLayer;
use crate::detection::{
    assign_head_targets, assign_rpn_targets, detection_loss, generate_anchors, AnchorLabel, BBox, DetectorConfig,
    RoiHead, Rpn,
};
use crate::error::{Error, Result};
use crate::neck::ResidualBlock;
use crate::nn::Mode;
use crate::numerics::{
    batch_norm, bilinear_resize, check_gradients, conv2d, gelu, layer_norm, ops, roi_align, softmax_rows,
    GradCheckReport, Rng, Tensor,
};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Which part of the model to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Backbone,
    Neck,
    Detection,
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "backbone" => Ok(Self::Backbone),
            "neck" => Ok(Self::Neck),
            "detection" => Ok(Self::Detection),
            _ => Err(Error::invalid(format!(
                "unknown module `{s}` (all, backbone, neck, detection)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::Backbone => "backbone",
            Self::Neck => "neck",
            Self::Detection => "detection",
        })
    }
}

type Check = fn(&mut Rng) -> Result<GradCheckReport>;

const BACKBONE: &[(&str, Check)] = &[
    ("gelu", check_gelu),
    ("softmax", check_softmax),
    ("layer_norm", check_layer_norm),
    ("linear", check_linear),
    ("bilinear_resize", check_bilinear_resize),
    ("attention_layer", check_attention_layer),
];
const NECK: &[(&str, Check)] = &[
    ("conv2d", check_conv2d),
    ("batch_norm", check_batch_norm),
    ("residual_block", check_residual_block),
];
const DETECTION: &[(&str, Check)] = &[("roi_align", check_roi_align), ("detection_loss", check_detection_loss)];

/// Names of the operations a suite covers, in run order.
pub fn suite_ops(suite: Suite) -> Vec<&'static str> {
    checks(suite).iter().map(|c| c.0).collect()
}

fn checks(suite: Suite) -> Vec<(&'static str, Check)> {
    match suite {
        Suite::All => [BACKBONE, NECK, DETECTION].concat(),
        Suite::Backbone => BACKBONE.to_vec(),
        Suite::Neck => NECK.to_vec(),
        Suite::Detection => DETECTION.to_vec(),
    }
}

/// Runs every check of `suite` on inputs drawn from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<GradCheckReport>> {
    checks(suite)
        .into_iter()
        .enumerate()
        .map(|(i, (_, check))| check(&mut Rng::new(seed).fork(i as u64)))
        .collect()
}

/// One `name max_rel_error PASS|FAIL` line per report.
pub fn format_reports(reports: &[GradCheckReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "{:<16} max_rel_error {:.3e} (tol {:.0e}) {}\n",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.normal()).collect(), shape).expect("shape")
}

/// Weighted sum with fixed random weights, so gradients are not uniform.
fn probe(out: &Tensor<f64>, weights: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(ops::sum(&ops::mul(out, weights)?))
}

fn run(
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
) -> Result<GradCheckReport> {
    check_gradients(name, inputs, f, EPS, TOLERANCE)
}

fn check_gelu(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[6, 7]);
    let w = random(rng, &[6, 7]);
    run("gelu", &[x], |t| probe(&gelu(&t[0]), &w))
}

fn check_softmax(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[5, 6]);
    let w = random(rng, &[5, 6]);
    run("softmax", &[x], |t| probe(&softmax_rows(&t[0]), &w))
}

fn check_layer_norm(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[4, 8]);
    let (g, b) = (random(rng, &[8]), random(rng, &[8]));
    let w = random(rng, &[4, 8]);
    run("layer_norm", &[x, g, b], |t| {
        probe(&layer_norm(&t[0], &t[1], &t[2], 1e-6)?, &w)
    })
}

fn check_batch_norm(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[3, 4, 5]);
    let (g, b) = (random(rng, &[5]), random(rng, &[5]));
    let w = random(rng, &[3, 4, 5]);
    let (mean, var) = (vec![0.0; 5], vec![1.0; 5]);
    run("batch_norm", &[x, g, b], |t| {
        probe(&batch_norm(&t[0], &t[1], &t[2], &mean, &var, true, 1e-5)?.0, &w)
    })
}

fn check_linear(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[5, 6]);
    let (wt, b) = (random(rng, &[6, 4]), random(rng, &[4]));
    let w = random(rng, &[5, 4]);
    run("linear", &[x, wt, b], |t| {
        probe(&ops::linear(&t[0], &t[1], Some(&t[2]))?, &w)
    })
}

fn check_conv2d(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[6, 5, 3]);
    let (k, b) = (random(rng, &[3, 3, 3, 4]), random(rng, &[4]));
    let w = random(rng, &[3, 3, 4]);
    run("conv2d", &[x, k, b], |t| {
        probe(&conv2d(&t[0], &t[1], Some(&t[2]), 2, 1)?, &w)
    })
}

fn check_bilinear_resize(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = random(rng, &[4, 3, 2]);
    let w = random(rng, &[7, 5, 2]);
    run("bilinear_resize", &[x], |t| probe(&bilinear_resize(&t[0], 7, 5)?, &w))
}

fn check_attention_layer(rng: &mut Rng) -> Result<GradCheckReport> {
    let layer = EncoderLayer::<f64>::new("layer", 8, 2, 2, rng);
    let x = random(rng, &[5, 8]);
    let w = random(rng, &[5, 8]);
    let wa = random(rng, &[2, 5, 5]);
    run(
        "attention_layer",
        &[x, layer.qkv.weight.value.detach(), layer.fc1.weight.value.detach()],
        |t| {
            let mut l = layer.clone();
            l.qkv.weight.value = t[1].clone();
            l.fc1.weight.value = t[2].clone();
            let (y, maps) = l.forward(&t[0])?;
            ops::add(&probe(&y, &w)?, &probe(&maps, &wa)?)
        },
    )
}

fn check_residual_block(rng: &mut Rng) -> Result<GradCheckReport> {
    let block = ResidualBlock::<f64>::new("block", 3, rng);
    let x = random(rng, &[4, 3, 3]);
    let w = random(rng, &[4, 3, 3]);
    run(
        "residual_block",
        &[x, block.conv1.weight.value.detach(), block.bn2.gamma.value.detach()],
        |t| {
            let mut b = block.clone();
            b.conv1.weight.value = t[1].clone();
            b.bn2.gamma.value = t[2].clone();
            probe(&b.forward(&t[0], Mode::Train)?, &w)
        },
    )
}

fn check_roi_align(rng: &mut Rng) -> Result<GradCheckReport> {
    let fm = random(rng, &[5, 6, 2]);
    let boxes = [[3.0, 2.5, 30.0, 21.0], [10.0, 12.0, 44.0, 39.0]];
    let w = random(rng, &[2, 3, 3, 2]);
    run("roi_align", &[fm], |t| {
        probe(&roi_align(&t[0], &boxes, 1.0 / 8.0, 3, 3, 2)?, &w)
    })
}

fn check_detection_loss(rng: &mut Rng) -> Result<GradCheckReport> {
    let mut cfg = DetectorConfig::desk(2);
    cfg.head_hidden = 6;
    cfg.roi_output = (2, 2);
    let rpn = Rpn::<f64>::new(3, 2, rng);
    let head = RoiHead::<f64>::new(3, &cfg, rng);
    let fm = random(rng, &[4, 4, 3]);
    let anchors = generate_anchors((4, 4), 8.0, &[100.0, 300.0], &[1.0]);
    let gt = [BBox::new(3.0, 4.0, 15.0, 20.0)?, BBox::new(16.0, 10.0, 30.0, 29.0)?];
    let mut labels = assign_rpn_targets(&anchors, &gt, &cfg, rng);
    // Make sure both classification targets appear.
    for (i, l) in labels.iter_mut().enumerate() {
        if *l == AnchorLabel::Ignore && i % 3 == 0 {
            *l = AnchorLabel::Negative;
        }
    }
    let proposals = [BBox::new(2.0, 2.0, 14.0, 22.0)?, BBox::new(20.0, 1.0, 31.0, 9.0)?];
    let targets = assign_head_targets(&proposals, &gt, &[0, 1], &cfg, rng)?;
    let regions: Vec<BBox> = targets.iter().map(|t| t.proposal).collect();
    run(
        "detection_loss",
        &[fm, rpn.conv.weight.value.detach(), head.fc1.weight.value.detach()],
        |t| {
            let mut rpn = rpn.clone();
            let mut head = head.clone();
            rpn.conv.weight.value = t[1].clone();
            head.fc1.weight.value = t[2].clone();
            let r = rpn.forward(&t[0])?;
            let h = head.forward(&t[0], &regions, 8.0)?;
            Ok(detection_loss(&r, &labels, &anchors, &gt, Some(&h), &targets, cfg.huber_beta)?.total)
        },
    )
}
