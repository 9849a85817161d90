//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{ref_coco, ref_nms};
use tempfile::TempDir;
use vitfrcnn::backbone::{interpolate_pos_embed, to_spatial, Backbone, BackboneConfig, OutputMode};
use vitfrcnn::data::{generate_synthetic, resize_keep_aspect, Annotation, Dataset, SyntheticSpec};
use vitfrcnn::detection::{
    decode_box, encode_box, format_records, generate_anchors, nms, Anchor, BBox, Detection, DetectorConfig,
};
use vitfrcnn::evaluation::{
    average_precision, coco_suite, nms_sensitivity_sweep, predict_dataset, MetricsReport, SweepCurve,
};
use vitfrcnn::gradcheck::{run_suite, Suite};
use vitfrcnn::numerics::{Rng, Tensor};
use vitfrcnn::training::{train, TrainConfig, Trainer, CHECKPOINT_NAME, LOG_NAME};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn gradient_fidelity() -> Outcome {
    let expected = [
        "gelu",
        "softmax",
        "layer_norm",
        "batch_norm",
        "linear",
        "conv2d",
        "bilinear_resize",
        "attention_layer",
        "residual_block",
        "roi_align",
        "detection_loss",
    ];
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let reports = run_suite(Suite::All, seed).map_err(|e| e.to_string())?;
        let names: BTreeSet<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        ensure!(names == expected.into_iter().collect(), "checked ops {names:?}");
        for r in &reports {
            ensure!(
                r.passed && r.max_rel_error < 1e-4,
                "{} (seed {seed}): relative error {:e}",
                r.name,
                r.max_rel_error
            );
            worst = worst.max(r.max_rel_error);
        }
    }
    Ok(format!("11 ops x 3 seeds, worst relative error {worst:.2e}"))
}

fn box_round_trip() -> Outcome {
    let t = encode_box(
        &BBox::from_center(10.0, 20.0, 40.0, 80.0),
        &Anchor {
            x: 12.0,
            y: 18.0,
            w: 32.0,
            h: 64.0,
        },
    )
    .map_err(|e| e.to_string())?;
    let want = [-0.0625, 0.03125, 0.22314, 0.22314];
    for (got, want) in t.as_array().iter().zip(want) {
        ensure!((got - want).abs() < 1e-5, "worked example gives {:?}", t.as_array());
    }
    let mut rng = Rng::new(11);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (w, h) = (rng.uniform_range(1.0, 600.0), rng.uniform_range(1.0, 600.0));
        let b = BBox::from_center(rng.uniform_range(0.0, 1000.0), rng.uniform_range(0.0, 1000.0), w, h);
        let a = Anchor {
            x: rng.uniform_range(0.0, 1000.0),
            y: rng.uniform_range(0.0, 1000.0),
            w: rng.uniform_range(8.0, 600.0),
            h: rng.uniform_range(8.0, 600.0),
        };
        let back = encode_box(&b, &a)
            .and_then(|t| decode_box(&t, &a))
            .map_err(|e| e.to_string())?;
        for (x, y) in back.as_array().iter().zip(b.as_array()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure!(worst <= 1e-9, "max round-trip error {worst:e}");
    Ok(format!("worked example ok; 10000 pairs, max error {worst:.1e}"))
}

fn nms_oracle() -> Outcome {
    let mut rng = Rng::new(12);
    let (mut kept_total, mut total) = (0, 0);
    for case in 0..1000 {
        let n = rng.int_inclusive(0, 64);
        let boxes: Vec<BBox> = (0..n)
            .map(|_| {
                let (x, y) = (rng.int_inclusive(0, 16) as f64, rng.int_inclusive(0, 16) as f64);
                let (w, h) = (rng.int_inclusive(4, 24) as f64, rng.int_inclusive(4, 24) as f64);
                BBox::new(x, y, x + w, y + h).unwrap()
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.int_inclusive(0, 10) as f64 / 10.0).collect();
        for t in [0.3, 0.5, 0.7, 0.9] {
            let got = nms(&boxes, &scores, t);
            let want = ref_nms(&boxes, &scores, t);
            ensure!(got == want, "instance {case} at {t}: {got:?} vs {want:?}");
            kept_total += got.len();
            total += n;
        }
    }
    Ok(format!(
        "1000 instances x 4 thresholds identical ({kept_total} of {total} boxes kept)"
    ))
}

fn random_instance(rng: &mut Rng, case: usize) -> (Vec<(u64, Detection)>, Vec<Annotation>) {
    let jitter = |rng: &mut Rng, v: f64| v + rng.int_inclusive(0, 16) as f64 - 8.0;
    let num_images = rng.int_inclusive(1, 5);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..num_images as u64 {
        let image_id = 10 + 3 * img;
        let mut a = Annotation {
            image_id,
            file_name: format!("{image_id}.ppm"),
            width: 96,
            height: 96,
            boxes: Vec::new(),
            labels: Vec::new(),
        };
        for _ in 0..rng.int_inclusive(0, 4) {
            let (w, h) = (rng.int_inclusive(4, 70), rng.int_inclusive(4, 70));
            let (x, y) = (rng.int_inclusive(0, 96 - w) as f64, rng.int_inclusive(0, 96 - h) as f64);
            let b = BBox::new(x, y, x + w as f64, y + h as f64).unwrap();
            let class = rng.int_inclusive(0, 2);
            a.boxes.push(b);
            a.labels.push(class);
            if rng.bernoulli(0.8) {
                for _ in 0..rng.int_inclusive(1, 3) {
                    let (x1, y1) = (jitter(rng, b.x1), jitter(rng, b.y1));
                    let (x2, y2) = (jitter(rng, b.x2).max(x1 + 1.0), jitter(rng, b.y2).max(y1 + 1.0));
                    let class_id = if rng.bernoulli(0.85) {
                        class
                    } else {
                        rng.int_inclusive(0, 2)
                    };
                    let score = rng.int_inclusive(1, 20) as f64 / 20.0;
                    dets.push((
                        image_id,
                        Detection {
                            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
                            class_id,
                            score,
                        },
                    ));
                }
            }
        }
        let extra = if case.is_multiple_of(25) { 110 } else { rng.int_inclusive(0, 5) };
        for _ in 0..extra {
            let (w, h) = (rng.int_inclusive(2, 60) as f64, rng.int_inclusive(2, 60) as f64);
            let (x, y) = (rng.int_inclusive(0, 90) as f64, rng.int_inclusive(0, 90) as f64);
            dets.push((
                image_id,
                Detection {
                    bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                    class_id: if case.is_multiple_of(25) { 0 } else { rng.int_inclusive(0, 2) },
                    score: rng.int_inclusive(1, 20) as f64 / 20.0,
                },
            ));
        }
        gts.push(a);
    }
    if rng.bernoulli(0.2) {
        dets.push((
            999,
            Detection {
                bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                class_id: 0,
                score: 1.0,
            },
        ));
    }
    rng.shuffle(&mut dets);
    (dets, gts)
}

fn ap_oracle() -> Outcome {
    let hand = average_precision(&[true, false, true], 2).ok_or("hand case undefined")?;
    ensure!((hand - 0.8350).abs() < 1e-4, "hand case AP {hand}");
    let mut rng = Rng::new(13);
    let mut worst = 0.0f64;
    let mut defined = 0;
    for case in 0..200 {
        let (dets, gts) = random_instance(&mut rng, case);
        let got = coco_suite(&dets, &gts);
        let want = ref_coco(&dets, &gts);
        for ((name, g), w) in got.values().into_iter().zip(want) {
            match (g, w) {
                (Some(g), Some(w)) => {
                    worst = worst.max((g - w).abs());
                    ensure!((g - w).abs() <= 1e-6, "instance {case} {name}: {g} vs oracle {w}");
                    defined += 1;
                }
                (None, None) => {}
                _ => return Err(format!("instance {case} {name}: {g:?} vs oracle {w:?}")),
            }
        }
        if let (Some(a50), Some(a75)) = (got.ap50, got.ap75) {
            ensure!(a50 >= a75, "instance {case}: ap50 {a50} < ap75 {a75}");
        }
    }
    Ok(format!(
        "hand case {hand:.4}; 200 instances, {defined} metrics, max deviation {worst:.1e}"
    ))
}

fn anchor_grid() -> Outcome {
    for cfg in [DetectorConfig::reference(80), DetectorConfig::desk(3)] {
        ensure!(
            cfg.anchors_per_cell() == 15,
            "{} anchors per cell",
            cfg.anchors_per_cell()
        );
        let anchors = generate_anchors((7, 7), 32.0, &cfg.anchor_areas, &cfg.aspect_ratios);
        ensure!(anchors.len() == 735, "{} anchors", anchors.len());
        for (i, a) in anchors.iter().enumerate() {
            let want = cfg.anchor_areas[(i % 15) / cfg.aspect_ratios.len()];
            ensure!(
                ((a.w * a.h) - want).abs() <= 1e-6 * want,
                "anchor {i}: area {} vs {want}",
                a.w * a.h
            );
        }
    }
    Ok("7x7 grid -> 735 anchors, areas exact (reference and desk sizes)".into())
}

fn random_image(h: usize, w: usize, rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_vec((0..h * w * 3).map(|_| rng.uniform() as f32).collect(), &[h, w, 3]).unwrap()
}

fn overlap_variant() -> Outcome {
    let mut rng = Rng::new(14);
    let b = Backbone::<f32>::new(BackboneConfig::desk(), &mut rng).map_err(|e| e.to_string())?;
    let image = random_image(96, 96, &mut rng);
    let (conv, g1) = b.project_patches_conv(&image).map_err(|e| e.to_string())?;
    let (lin, g2) = b.project_patches_linear(&image).map_err(|e| e.to_string())?;
    ensure!(g1 == g2, "grids {g1:?} vs {g2:?}");
    let same = conv
        .data()
        .iter()
        .zip(lin.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ensure!(
        same && conv.shape() == lin.shape(),
        "conv and linear patch paths differ"
    );

    let vit32 = |stride| BackboneConfig {
        patch_size: 32,
        stride,
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2,
        pretrained_grid: (7, 7),
    };
    let base = vit32(32).grid_for(224, 224).map_err(|e| e.to_string())?;
    let half = vit32(16).grid_for(224, 224).map_err(|e| e.to_string())?;
    ensure!(base == (7, 7) && half == (13, 13), "grids {base:?} / {half:?}");
    let overlapped = Backbone::<f32>::new(vit32(16), &mut rng).map_err(|e| e.to_string())?;
    let (tokens, grid) = overlapped
        .project_patches_conv(&random_image(224, 224, &mut rng))
        .map_err(|e| e.to_string())?;
    ensure!(
        grid == (13, 13) && tokens.shape() == [169, 8],
        "overlapped tokens {:?}",
        tokens.shape()
    );
    Ok("stride = patch: bit-identical; 224px P=32 stride 16: 13x13 vs 7x7".into())
}

fn pos_embed_interpolation() -> Outcome {
    let mut rng = Rng::new(15);
    let d = 6;
    let random = |rows: usize, rng: &mut Rng| {
        Tensor::<f64>::from_vec((0..rows * d).map(|_| rng.normal()).collect(), &[rows, d]).unwrap()
    };
    let interp = |p: &Tensor<f64>, a, b| interpolate_pos_embed(p, a, b).map_err(|e| e.to_string());

    let p49 = random(50, &mut rng);
    ensure!(
        interp(&p49, (7, 7), (7, 7))?.data() == p49.data(),
        "matching grids changed the embedding"
    );
    let up = interp(&p49, (7, 7), (13, 13))?;
    ensure!(up.shape() == [170, d], "7x7 -> 13x13 gives {:?}", up.shape());

    let corners = |g: (usize, usize)| [0, g.1 - 1, (g.0 - 1) * g.1, g.0 * g.1 - 1];
    let round_trip =
        |p: &Tensor<f64>| -> Result<Tensor<f64>, String> { interp(&interp(p, (6, 4), (12, 8))?, (12, 8), (6, 4)) };

    let p24 = random(25, &mut rng);
    let back = round_trip(&p24)?;
    for c in corners((6, 4)) {
        let (got, want) = (&back.data()[(1 + c) * d..][..d], &p24.data()[(1 + c) * d..][..d]);
        ensure!(got == want, "corner token {c} moved: {got:?} vs {want:?}");
    }
    ensure!(back.data()[..d] == p24.data()[..d], "class token changed");
    let random_dev = max_dev(&back, &p24);

    // An embedding that is bilinear in the grid position lies in the span of
    // the interpolant and must survive the round trip.
    let mut smooth = p24.data()[..d].to_vec();
    let coef: Vec<[f64; 4]> = (0..d)
        .map(|_| [rng.normal(), rng.normal(), rng.normal(), rng.normal()])
        .collect();
    for r in 0..6 {
        for c in 0..4 {
            let (y, x) = (r as f64 / 5.0, c as f64 / 3.0);
            smooth.extend(coef.iter().map(|k| k[0] + k[1] * y + k[2] * x + k[3] * x * y));
        }
    }
    let smooth = Tensor::from_vec(smooth, &[25, d]).unwrap();
    let dev = max_dev(&round_trip(&smooth)?, &smooth);
    ensure!(
        dev <= 1e-3,
        "bilinear embedding deviates by {dev:e} after 6x4 -> 12x8 -> 6x4"
    );
    Ok(format!(
        "identity exact, 170 tokens, corners exact, bilinear round trip {dev:.1e} (random field {random_dev:.2})"
    ))
}

fn max_dev(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn desk_data() -> Dataset {
    generate_synthetic(&SyntheticSpec::desk(0)).unwrap()
}

fn ablations() -> Outcome {
    let ds = desk_data();
    let mut summary = Vec::new();
    for mode in [OutputMode::Final, OutputMode::All] {
        for concat_attn in [false, true] {
            for blocks in [0, 4, 8, 16] {
                let mut cfg = TrainConfig::desk(3);
                cfg.epochs = 5;
                cfg.lr_drop_epoch = 4;
                cfg.model.output_mode = mode;
                cfg.model.concat_attn = concat_attn;
                cfg.model.neck.num_blocks = blocks;
                let tag = format!("{mode:?}/concat={concat_attn}/blocks={blocks}");

                let grid = (12usize, 12usize);
                let want = match mode {
                    OutputMode::Final => 64,
                    OutputMode::All => 128,
                } + if concat_attn { grid.0 * grid.1 } else { 0 };
                let declared = cfg.model.spatial_channels().map_err(|e| format!("{tag}: {e}"))?;
                ensure!(declared == want, "{tag}: {declared} channels, expected {want}");

                let mut trainer = Trainer::<f32>::new(cfg, ds.categories.clone()).map_err(|e| format!("{tag}: {e}"))?;
                let out = trainer
                    .model
                    .backbone
                    .forward(&ds.samples[0].image.to_tensor())
                    .map_err(|e| e.to_string())?;
                let fm = to_spatial(&out, mode, concat_attn).map_err(|e| e.to_string())?;
                ensure!(fm.shape() == [12, 12, want], "{tag}: feature map {:?}", fm.shape());

                let mut last = f64::NAN;
                for _ in 0..5 {
                    trainer
                        .run_epoch(&ds.samples, &mut |r| last = r.loss.total())
                        .map_err(|e| format!("{tag}: {e}"))?;
                }
                ensure!(trainer.step == 50, "{tag}: {} steps", trainer.step);
                let mut finite = true;
                vitfrcnn::nn::Parameterized::visit_params(&trainer.model, &mut |p| {
                    finite &= p.value.data().iter().all(|v| v.is_finite())
                });
                ensure!(finite && last.is_finite(), "{tag}: non-finite state after 50 steps");
                if blocks == 0 {
                    summary.push(format!("{mode:?}{}={want}ch", if concat_attn { "+attn" } else { "" }));
                }
            }
        }
    }
    Ok(format!("16 configs x 50 steps finite; {}", summary.join(", ")))
}

struct Run {
    checkpoint: Vec<u8>,
    log: String,
    metrics: MetricsReport,
    metrics_csv: String,
    records: String,
    curve: SweepCurve,
    sweep_csv: String,
    /// Failures of the sweep invariants, if any.
    sweep_problems: Vec<String>,
    train_secs: f64,
    steps: usize,
}

const SWEEP: [f64; 4] = [0.5, 0.7, 0.9, 0.95];

fn full_run(dir: &Path) -> Result<Run, String> {
    let ds = desk_data();
    let cfg = TrainConfig::desk(3);
    let start = Instant::now();
    let mut trainer = Trainer::<f32>::new(cfg, ds.categories.clone()).map_err(|e| e.to_string())?;
    let log_records = train(&mut trainer, &ds, dir).map_err(|e| e.to_string())?;
    let train_secs = start.elapsed().as_secs_f64();

    let model = &trainer.model;
    let det_cfg = &model.cfg.detector;
    let gts: Vec<Annotation> = ds.samples.iter().map(|s| s.annotation()).collect();
    let cached = predict_dataset(model, &ds.samples).map_err(|e| e.to_string())?;

    let mut per_image: Vec<(u64, Vec<Detection>)> = Vec::new();
    for c in &cached {
        per_image.push((
            c.image_id,
            c.detections(det_cfg, det_cfg.final_nms_iou)
                .map_err(|e| e.to_string())?,
        ));
    }
    let flat: Vec<(u64, Detection)> = per_image.iter().flat_map(|(i, d)| d.iter().map(|d| (*i, *d))).collect();
    let metrics = coco_suite(&flat, &gts);
    let records = format_records(per_image.iter().map(|(i, d)| (*i, d.as_slice())));

    let curve = nms_sensitivity_sweep(&cached, &gts, det_cfg, &SWEEP).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    for t in SWEEP {
        let mut rerun = model.clone();
        rerun.cfg.detector.final_nms_iou = t;
        for (s, c) in ds.samples.iter().zip(&cached) {
            let from_cache = c.detections(det_cfg, t).map_err(|e| e.to_string())?;
            let r = resize_keep_aspect(s, 96, 96);
            let full: Vec<Detection> = rerun
                .detect(&r.sample.image.to_tensor())
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|d| Detection {
                    bbox: r.unscale(&d.bbox),
                    ..d
                })
                .collect();
            if full != from_cache {
                problems.push(format!("image {} at {t}: cached output differs from rerun", s.image_id));
            }
            if from_cache.len() > 100 {
                problems.push(format!("image {} at {t}: {} detections", s.image_id, from_cache.len()));
            }
            if let Some(d) = from_cache.iter().find(|d| d.score < 0.05) {
                problems.push(format!("image {} at {t}: score {}", s.image_id, d.score));
            }
        }
    }
    Ok(Run {
        checkpoint: fs::read(dir.join(CHECKPOINT_NAME)).map_err(|e| e.to_string())?,
        log: fs::read_to_string(dir.join(LOG_NAME)).map_err(|e| e.to_string())?,
        metrics_csv: metrics.to_csv(det_cfg.final_nms_iou),
        metrics,
        records,
        sweep_csv: curve.to_csv(),
        curve,
        sweep_problems: problems,
        train_secs,
        steps: log_records.len(),
    })
}

fn overfit(run: &Result<Run, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let ap50 = run.metrics.ap50.ok_or("no ground truth")?;
    ensure!(run.steps <= 2000, "{} optimizer steps", run.steps);
    ensure!(ap50 >= 0.90, "training-set AP50 {ap50:.4} after {} steps", run.steps);
    Ok(format!(
        "AP50 {ap50:.3} (AP {:.3}) after {} steps in {:.0} s",
        run.metrics.ap.unwrap_or(0.0),
        run.steps,
        run.train_secs
    ))
}

fn sweep(run: &Result<Run, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    ensure!(run.curve.thresholds == SWEEP, "thresholds {:?}", run.curve.thresholds);
    let rows = run.sweep_csv.lines().count() - 1;
    ensure!(rows == 4, "{rows} rows");
    ensure!(run.sweep_problems.is_empty(), "{}", run.sweep_problems.join("; "));
    ensure!(
        run.curve.reports[0] == run.metrics,
        "sweep at 0.5 differs from evaluation at 0.5"
    );
    let aps: Vec<String> = run
        .curve
        .ap_at_threshold()
        .iter()
        .map(|a| a.map_or("-".into(), |a| format!("{a:.3}")))
        .collect();
    Ok(format!(
        "4 rows, cache == reruns, <=100 dets, scores >= 0.05; AP {}",
        aps.join(" / ")
    ))
}

fn determinism(a: &Result<Run, String>, dir: &Path) -> Outcome {
    let a = a.as_ref().map_err(Clone::clone)?;
    let b = full_run(dir)?;
    ensure!(a.checkpoint == b.checkpoint, "checkpoints differ");
    ensure!(a.log == b.log, "training logs differ");
    ensure!(a.metrics_csv == b.metrics_csv, "metrics CSVs differ");
    ensure!(a.sweep_csv == b.sweep_csv, "sweep CSVs differ");
    ensure!(a.records == b.records, "detection records differ");
    Ok(format!(
        "second run identical: checkpoint {} bytes, log {} rows, metrics, sweep and detections",
        a.checkpoint.len(),
        a.log.lines().count() - 1
    ))
}

fn report(number: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] {number:>2}. {name}: {detail} ({secs:.1}s)");
    let _ = out.flush();
    outcome.is_ok()
}

fn main() {
    let tmp = TempDir::new().unwrap();
    let mut passed = vec![
        report(1, "gradient fidelity", gradient_fidelity),
        report(2, "box parameterization round trip", box_round_trip),
        report(3, "NMS oracle equivalence", nms_oracle),
        report(4, "AP oracle", ap_oracle),
        report(5, "anchor grid", anchor_grid),
        report(6, "overlap-variant consistency", overlap_variant),
        report(7, "position-embedding interpolation", pos_embed_interpolation),
    ];
    let first = catch_unwind(AssertUnwindSafe(|| full_run(&tmp.path().join("run_a"))))
        .unwrap_or_else(|_| Err("training run panicked".into()));
    passed.push(report(8, "desk-scale overfit", || overfit(&first)));
    passed.push(report(9, "ablation machinery", ablations));
    passed.push(report(10, "NMS sweep machinery", || sweep(&first)));
    passed.push(report(11, "determinism", || {
        determinism(&first, &tmp.path().join("run_b"))
    }));

    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", passed.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
