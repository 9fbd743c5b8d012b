use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::inpaint::{InpaintArch, InpaintTrainConfig, InpaintTrainer};
use crate::mesh::body::BodyResolution;
use crate::nn::{load_weights, save_weights, NetworkWeights};
use crate::shape::{ShapeArch, ShapeDataset, ShapeTrainConfig, ShapeTrainer};
use crate::{Error, Result};

use super::{write_json, Config};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainShapeConfig {
    pub arch: ShapeArch,
    pub train: ShapeTrainConfig,
    pub train_shapes: usize,
    pub val_shapes: usize,
    pub resolution: BodyResolution,
    pub dataset_seed: u64,
}

impl Default for TrainShapeConfig {
    fn default() -> Self {
        Self {
            arch: ShapeArch::desk(),
            train: ShapeTrainConfig::default(),
            train_shapes: 200,
            val_shapes: 20,
            resolution: BodyResolution::default(),
            dataset_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainInpaintConfig {
    pub arch: InpaintArch,
    pub train: InpaintTrainConfig,
    /// Iterations between checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainInpaintConfig {
    fn default() -> Self {
        Self {
            arch: InpaintArch::desk(),
            train: InpaintTrainConfig::default(),
            checkpoint_every: 50,
        }
    }
}

impl TrainInpaintConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be positive"));
        }
        let (w, h) = self.train.corpus.size();
        let step = 1u32 << self.arch.stages();
        if w % step != 0 || h % step != 0 {
            return Err(Error::invalid(format!("corpus size {w}x{h} is not a multiple of {step}")));
        }
        Ok(())
    }
}

/// Writes to a sibling temporary file first, so an interrupted save never
/// leaves a truncated checkpoint.
fn save_checkpoint(path: &Path, w: &NetworkWeights) -> Result<()> {
    let tmp = path.with_extension("w3b.tmp");
    save_weights(&tmp, w)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn diverged(e: Error, last_good: Option<&Path>) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(match last_good {
            Some(p) => format!("{m}; last good checkpoint: {}", p.display()),
            None => format!("{m}; no checkpoint was written yet"),
        }),
        e => e,
    }
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn resume_weights(resume: Option<&Path>) -> Result<Option<NetworkWeights>> {
    resume
        .map(|p| {
            if !p.is_file() {
                return Err(Error::invalid(format!("checkpoint not found: {}", p.display())));
            }
            load_weights(p, None)
        })
        .transpose()
}

/// Trains the shape model. Writes `shape.w3b`, `training.csv`,
/// `summary.json` (with `tau_train`) and `checkpoint.w3b` after every epoch.
pub fn cmd_train_shape(out: &Path, cfg: &Config, resume: Option<&Path>) -> Result<Value> {
    cfg.validate()?;
    let t = &cfg.train_shape;
    t.arch.validate()?;
    t.resolution.validate()?;
    let mut trainer = match resume_weights(resume)? {
        Some(w) => ShapeTrainer::from_checkpoint(&w)?,
        None => ShapeTrainer::new(t.arch.clone(), t.train.clone())?,
    };
    // A resumed run keeps the checkpoint's settings but trains to the configured length.
    trainer.config.epochs = t.train.epochs;
    let data = ShapeDataset::generate(t.dataset_seed, t.train_shapes, t.val_shapes, t.resolution)?;
    create_dir(out)?;
    let ckpt = out.join("checkpoint.w3b");
    let mut last_good: Option<PathBuf> = resume.map(Path::to_path_buf);
    while trainer.epoch < trainer.config.epochs {
        trainer.run_epoch(&data).map_err(|e| diverged(e, last_good.as_deref()))?;
        save_checkpoint(&ckpt, &trainer.checkpoint())?;
        last_good = Some(ckpt.clone());
    }
    let mut csv = String::from("epoch,train_mse,val_mse\n");
    for l in &trainer.log {
        let val = l.val_mse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{}", l.epoch, l.train_mse, val).unwrap();
    }
    let model = trainer.finish(&data).map_err(|e| diverged(e, last_good.as_deref()))?;
    model.save(&out.join("shape.w3b"))?;
    fs::write(out.join("training.csv"), csv).map_err(|e| Error::io(out.join("training.csv"), e))?;
    let summary = json!({
        "model": "shape.w3b",
        "architecture": model.arch,
        "train_shapes": t.train_shapes,
        "val_shapes": t.val_shapes,
        "summary": model.training,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Trains the inpainting network. Writes `inpaint.w3b`, `training.csv`,
/// `summary.json` and `checkpoint.w3b` every `checkpoint_every` iterations.
pub fn cmd_train_inpaint(out: &Path, cfg: &Config, resume: Option<&Path>) -> Result<Value> {
    cfg.validate()?;
    let t = &cfg.train_inpaint;
    let mut trainer = match resume_weights(resume)? {
        Some(w) => InpaintTrainer::from_checkpoint(&w)?,
        None => InpaintTrainer::new(t.arch.clone(), t.train.clone())?,
    };
    trainer.config.iterations = t.train.iterations;
    create_dir(out)?;
    let ckpt = out.join("checkpoint.w3b");
    let mut last_good: Option<PathBuf> = resume.map(Path::to_path_buf);
    while !trainer.done() {
        let step = trainer.step().map_err(|e| diverged(e, last_good.as_deref()))?;
        if !step.loss.is_finite() {
            let msg = format!("training loss became {} at iteration {}", step.loss, step.iteration);
            return Err(diverged(Error::Numerical(msg), last_good.as_deref()));
        }
        if trainer.iteration % t.checkpoint_every == 0 || trainer.done() {
            save_checkpoint(&ckpt, &trainer.checkpoint())?;
            last_good = Some(ckpt.clone());
        }
    }
    let mut csv = String::from("iteration,phase,loss,hole,valid,style,tv\n");
    for l in &trainer.log {
        writeln!(csv, "{},{},{},{},{},{},{}", l.iteration, l.phase, l.loss, l.hole, l.valid, l.style, l.tv).unwrap();
    }
    trainer.net.save(&out.join("inpaint.w3b"))?;
    fs::write(out.join("training.csv"), csv).map_err(|e| Error::io(out.join("training.csv"), e))?;
    let summary = json!({
        "model": "inpaint.w3b",
        "architecture": trainer.net.arch,
        "iterations": trainer.iteration,
        "final_loss": trainer.log.last().map(|l| l.loss),
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
