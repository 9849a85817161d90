//! The training loop, its loss log and exact-resume checkpoints.

use std::collections::BTreeSet;
use std::path::Path;

use serde_json::json;

use super::{lr_at, sgd_step, TrainConfig, Velocity};
use crate::checkpoint::Checkpoint;
use crate::data::{hflip, resize_keep_aspect, Category, Dataset, Sample};
use crate::detection::LossComponents;
use crate::error::{Error, Result};
use crate::model::Detector;
use crate::nn::{ParamKind, Parameterized};
use crate::numerics::{lit, ops, Rng, RngState, Scalar};

pub const LOG_HEADER: &str = "step,epoch,lr,loss_total,loss_rpn_cls,loss_rpn_box,loss_head_cls,loss_head_box";
pub const LOG_NAME: &str = "train_log.csv";
pub const CHECKPOINT_NAME: &str = "model.ckpt";

const VELOCITY_PREFIX: &str = "velocity/";

/// Mean per-image loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossComponents,
}

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.epoch,
            self.lr,
            l.total(),
            l.rpn_cls,
            l.rpn_box,
            l.head_cls,
            l.head_box
        )
    }

    pub fn is_finite(&self) -> bool {
        self.loss.total().is_finite()
    }
}

pub fn format_log(records: &[LossRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Model, optimizer state and random stream: everything needed to continue
/// training exactly.
#[derive(Debug)]
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    pub categories: Vec<Category>,
    pub model: Detector<T>,
    pub velocity: Velocity<T>,
    pub rng: Rng,
    /// Optimizer steps taken.
    pub step: usize,
    /// Epochs completed.
    pub epoch: usize,
    /// Parameters that have received a nonzero gradient.
    pub touched: BTreeSet<String>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, categories: Vec<Category>) -> Result<Self> {
        cfg.validate()?;
        if categories.len() != cfg.model.detector.num_classes {
            return Err(Error::invalid(format!(
                "dataset has {} categories, model is configured for {}",
                categories.len(),
                cfg.model.detector.num_classes
            )));
        }
        let root = Rng::new(cfg.seed);
        let model = Detector::new(cfg.model.clone(), &mut root.fork(0))?;
        let velocity = Velocity::zeros(&model);
        Ok(Self {
            rng: root.fork(1),
            cfg,
            categories,
            model,
            velocity,
            step: 0,
            epoch: 0,
            touched: BTreeSet::new(),
        })
    }

    /// Parameters, momentum buffers and, in `meta`, the training config,
    /// categories, step, epoch and random-stream position.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let state = self.rng.state();
        let mut ckpt = Checkpoint::new(json!({
            "train": self.cfg,
            "categories": self.categories.iter().map(|c| json!({"id": c.id, "name": c.name})).collect::<Vec<_>>(),
            "step": self.step,
            "epoch": self.epoch,
            "rng": {"seed": state.seed, "word_pos": state.word_pos.to_string()},
        }));
        ckpt.push_params(&self.model);
        for (name, v) in &self.velocity.buffers {
            ckpt.push(format!("{VELOCITY_PREFIX}{name}"), &[v.len()], v.clone());
        }
        ckpt
    }

    /// Restores a trainer saved by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        let bad = |m: &str| Error::parse("checkpoint meta", m);
        let meta = &ckpt.meta;
        let cfg: TrainConfig =
            serde_json::from_value(meta["train"].clone()).map_err(|e| bad(&format!("train config: {e}")))?;
        let categories = meta["categories"]
            .as_array()
            .ok_or_else(|| bad("missing categories"))?
            .iter()
            .map(|c| {
                Ok(Category {
                    id: c["id"].as_u64().ok_or_else(|| bad("category id"))?,
                    name: c["name"].as_str().ok_or_else(|| bad("category name"))?.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut t = Self::new(cfg, categories)?;
        ckpt.load_params(&mut t.model)?;
        for (name, v) in &mut t.velocity.buffers {
            let stored = ckpt
                .get(&format!("{VELOCITY_PREFIX}{name}"))
                .ok_or_else(|| bad(&format!("missing velocity for {name}")))?;
            if stored.data.len() != v.len() {
                return Err(bad(&format!("velocity for {name} has the wrong size")));
            }
            v.clone_from(&stored.data);
        }
        t.step = meta["step"].as_u64().ok_or_else(|| bad("missing step"))? as usize;
        t.epoch = meta["epoch"].as_u64().ok_or_else(|| bad("missing epoch"))? as usize;
        let rng = &meta["rng"];
        t.rng = Rng::from_state(RngState {
            seed: rng["seed"].as_u64().ok_or_else(|| bad("missing rng seed"))?,
            word_pos: rng["word_pos"]
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("missing rng word_pos"))?,
        });
        Ok(t)
    }

    /// Batches of sample indices for the next epoch, shuffled.
    pub fn epoch_batches(&mut self, num_samples: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..num_samples).collect();
        self.rng.shuffle(&mut order);
        order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// One optimizer step over `batch`: each image is flipped at random,
    /// rescaled, and its loss divided by the batch size is backpropagated;
    /// then SGD at [`lr_at`]. A non-finite loss returns its record without
    /// updating anything.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<LossRecord> {
        let lr = lr_at(self.step, self.epoch, &self.cfg);
        let (h, w) = self.cfg.model.image_size;
        let inv = 1.0 / batch.len() as f64;
        let mut loss = LossComponents::default();
        self.model.zero_grads();
        for sample in batch {
            let flipped = if self.cfg.hflip {
                hflip(sample, &mut self.rng).0
            } else {
                (*sample).clone()
            };
            let s = resize_keep_aspect(&flipped, h.min(w), h.max(w)).sample;
            let out = self
                .model
                .train_loss(&s.image.to_tensor(), &s.boxes, &s.labels, &mut self.rng)?;
            let c = out.components.scaled(inv);
            loss.add(&c);
            if !c.total().is_finite() {
                self.model.zero_grads();
                return Ok(LossRecord {
                    step: self.step,
                    epoch: self.epoch,
                    lr,
                    loss,
                });
            }
            ops::scale(&out.total, lit(inv)).backward()?;
        }
        let touched = &mut self.touched;
        self.model.visit_params(&mut |p| {
            if p.kind != ParamKind::Buffer
                && !touched.contains(&p.name)
                && p.value.grad().is_some_and(|g| g.iter().any(|v| *v != T::zero()))
            {
                touched.insert(p.name.clone());
            }
        });
        sgd_step(&mut self.model, &mut self.velocity, lr, &self.cfg)?;
        self.model.zero_grads();
        let record = LossRecord {
            step: self.step,
            epoch: self.epoch,
            lr,
            loss,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs one epoch, calling `on_step` after every step. Stops at the
    /// first non-finite loss with a numeric error naming the step.
    pub fn run_epoch(&mut self, samples: &[Sample], on_step: &mut dyn FnMut(&LossRecord)) -> Result<()> {
        for batch in self.epoch_batches(samples.len()) {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
            let r = self.train_step(&refs)?;
            on_step(&r);
            if !r.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at step {} (epoch {})",
                    r.step, r.epoch
                )));
            }
        }
        self.epoch += 1;
        Ok(())
    }
}

/// Trains until `cfg.epochs`, continuing from the trainer's state. After
/// every epoch the checkpoint `out/model.ckpt` and the log
/// `out/train_log.csv` are rewritten; when resuming, log rows of steps
/// already taken are kept. Returns the records of this call.
pub fn train<T: Scalar>(trainer: &mut Trainer<T>, dataset: &Dataset, out: &Path) -> Result<Vec<LossRecord>> {
    train_with(trainer, dataset, out, &mut |_| {})
}

/// [`train`], reporting each optimizer step to `on_step`.
pub fn train_with<T: Scalar>(
    trainer: &mut Trainer<T>,
    dataset: &Dataset,
    out: &Path,
    on_step: &mut dyn FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if dataset.categories != trainer.categories {
        return Err(Error::invalid("dataset categories differ from the trainer's"));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(LOG_NAME);
    let mut kept: Vec<String> = Vec::new();
    if trainer.step > 0 {
        if let Ok(text) = std::fs::read_to_string(&log_path) {
            kept = text
                .lines()
                .skip(1)
                .filter(|l| {
                    l.split(',')
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .is_some_and(|s| s < trainer.step)
                })
                .map(str::to_string)
                .collect();
        }
    }
    let write_log = |kept: &[String], new: &[LossRecord]| -> Result<()> {
        let mut text = format!("{LOG_HEADER}\n");
        for l in kept {
            text.push_str(l);
            text.push('\n');
        }
        text.push_str(&format_log(new)[LOG_HEADER.len() + 1..]);
        std::fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))
    };
    let ckpt_path = out.join(CHECKPOINT_NAME);
    let mut records = Vec::new();
    write_log(&kept, &records)?;
    trainer.checkpoint().save(&ckpt_path)?;
    while trainer.epoch < trainer.cfg.epochs {
        let result = trainer.run_epoch(&dataset.samples, &mut |r| {
            on_step(r);
            records.push(*r);
        });
        write_log(&kept, &records)?;
        result?;
        trainer.checkpoint().save(&ckpt_path)?;
    }
    Ok(records)
}
