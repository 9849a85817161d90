//! `vitfrcnn`: generate data, train, evaluate and inspect the detector.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vitfrcnn::checkpoint::Checkpoint;
use vitfrcnn::data::{generate_synthetic, load_annotations, load_coco_json, Dataset, SyntheticSpec, MANIFEST_NAME};
use vitfrcnn::detection::{format_records, parse_records, Detection};
use vitfrcnn::evaluation::{coco_suite, detections_at, nms_sensitivity_sweep, overdetection_stats, predict_dataset};
use vitfrcnn::gradcheck::{format_reports, run_suite, Suite};
use vitfrcnn::training::{train_with, TrainConfig, Trainer, CHECKPOINT_NAME, LOG_NAME};
use vitfrcnn::{Error, Result};

#[derive(Parser)]
#[command(name = "vitfrcnn", version, about = "ViT backbone + two-stage detector on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic shapes dataset (PPM images + annotations.json).
    GenData {
        /// `key = value` spec; omitted keys take the desk defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch, or continue from a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding annotations.json and the images.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print every step's losses instead of one line per epoch.
        #[arg(long)]
        verbose: bool,
    },
    /// AP metrics of a checkpoint, or of saved detection records.
    Eval {
        #[arg(long, required_unless_present = "detections")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Read detections from a record file instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        detections: Option<PathBuf>,
        /// Final per-class NMS IoU threshold.
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
        /// Write the metrics CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the model's detections as records.
        #[arg(long)]
        save_detections: Option<PathBuf>,
    },
    /// AP as a function of the final NMS threshold, from one forward pass.
    SweepNms {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.9, 0.95])]
        thresholds: Vec<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic gradients against central differences.
    GradCheck {
        #[arg(long, default_value_t = Suite::All)]
        module: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Histogram of detections per ground-truth box.
    Overdet {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { spec, out } => {
            let spec = SyntheticSpec::from_config_text(&read(&spec)?)?;
            let ds = generate_synthetic(&spec)?;
            ds.write_to_dir(&out)?;
            println!("wrote {} images to {}", ds.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            verbose,
        } => {
            let cfg = TrainConfig::from_config_text(&read(&config)?)?;
            let ds = load_dataset(&data)?;
            let mut trainer = match resume {
                Some(p) => {
                    let mut t = Trainer::<f32>::from_checkpoint(&Checkpoint::load(&p)?)?;
                    if t.cfg.model != cfg.model {
                        return Err(Error::InvalidArgument(format!(
                            "{} describes a different model than {}",
                            config.display(),
                            p.display()
                        )));
                    }
                    t.cfg = cfg;
                    t
                }
                None => Trainer::<f32>::new(cfg, ds.categories.clone())?,
            };
            let per_epoch = ds.len().div_ceil(trainer.cfg.batch_size);
            let records = train_with(&mut trainer, &ds, &out, &mut |r| {
                if verbose || (r.step + 1) % per_epoch == 0 {
                    println!(
                        "epoch {:>4} step {:>6} lr {:.6} loss {:.4}",
                        r.epoch,
                        r.step,
                        r.lr,
                        r.loss.total()
                    );
                }
            })?;
            println!(
                "trained {} steps; checkpoint {}, log {}",
                records.len(),
                out.join(CHECKPOINT_NAME).display(),
                out.join(LOG_NAME).display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            detections,
            nms_iou,
            csv,
            save_detections,
        } => {
            let dets = match (&detections, &checkpoint) {
                (Some(p), _) => parse_records(&read(p)?)?,
                (None, Some(ckpt)) => {
                    let trainer = load_trainer(ckpt)?;
                    let ds = load_dataset(&data)?;
                    let cached = predict_dataset(&trainer.model, &ds.samples)?;
                    let dets = detections_at(&cached, &trainer.cfg.model.detector, nms_iou)?;
                    if let Some(p) = &save_detections {
                        write(p, &records_text(&dets))?;
                    }
                    dets
                }
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let gts = load_annotations(&data.join(MANIFEST_NAME))?;
            let report = coco_suite(&dets, &gts.images);
            print!("{}", report.table());
            emit_csv(csv.as_deref(), &report.to_csv(nms_iou))?;
        }
        Command::SweepNms {
            checkpoint,
            data,
            thresholds,
            csv,
        } => {
            let trainer = load_trainer(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let cached = predict_dataset(&trainer.model, &ds.samples)?;
            let gts: Vec<_> = ds.samples.iter().map(|s| s.annotation()).collect();
            let curve = nms_sensitivity_sweep(&cached, &gts, &trainer.cfg.model.detector, &thresholds)?;
            print!("{}", curve.table());
            emit_csv(csv.as_deref(), &curve.to_csv())?;
        }
        Command::GradCheck { module, seed } => {
            let reports = run_suite(module, seed)?;
            print!("{}", format_reports(&reports));
            if reports.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Overdet {
            detections,
            data,
            iou,
            csv,
        } => {
            let dets = parse_records(&read(&detections)?)?;
            let gts = load_annotations(&data.join(MANIFEST_NAME))?;
            let stats = overdetection_stats(&dets, &gts.images, iou);
            match stats.mean {
                Some(m) => println!(
                    "{} ground-truth boxes, {m:.3} detections each on average",
                    stats.counts.len()
                ),
                None => println!("no ground-truth boxes"),
            }
            emit_csv(csv.as_deref(), &stats.histogram_csv())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit_csv(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("\n{text}");
            Ok(())
        }
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_coco_json(&dir.join(MANIFEST_NAME))
}

fn load_trainer(path: &Path) -> Result<Trainer<f32>> {
    Trainer::from_checkpoint(&Checkpoint::load(path)?)
}

fn records_text(dets: &[(u64, Detection)]) -> String {
    let mut per_image: Vec<(u64, Vec<Detection>)> = Vec::new();
    for (id, d) in dets {
        match per_image.last_mut() {
            Some((last, v)) if last == id => v.push(*d),
            _ => per_image.push((*id, vec![*d])),
        }
    }
    format_records(per_image.iter().map(|(id, v)| (*id, v.as_slice())))
}
