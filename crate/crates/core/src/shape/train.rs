use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::mesh::body::{generate_synthetic_body, BodyParams, BodyResolution};
use crate::mesh::sample_sites;
use crate::metrics::{directed_chamfer, sample_surface};
use crate::nn::{NetworkWeights, OptimConfig, Optimizer, Parameterized, Tensor};
use crate::{Error, Mesh, Result, Vec3};

use super::model::{complete_shape, ShapeArch, ShapeModel, TrainingSummary};

/// Generated bodies with template topology.
#[derive(Clone, Debug)]
pub struct ShapeDataset {
    pub train: Vec<Mesh>,
    pub val: Vec<Mesh>,
}

impl ShapeDataset {
    /// `train + val` bodies with poses and shapes drawn from `seed`.
    pub fn generate(seed: u64, train: usize, val: usize, resolution: BodyResolution) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |n: usize| -> Result<Vec<Mesh>> {
            (0..n)
                .map(|_| generate_synthetic_body(&BodyParams::sample(&mut rng, resolution)))
                .collect()
        };
        let train = make(train)?;
        let val = make(val)?;
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        Ok(Self { train, val })
    }
}

/// Random subsampling of the encoder input plus per-point jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Fraction of points kept, drawn uniformly from this range.
    pub keep_range: (f64, f64),
    /// Standard deviation of the per-coordinate shift, meters.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            keep_range: (0.4, 1.0),
            jitter: 0.005,
        }
    }
}

/// Applies [`AugmentConfig`] to a point sample.
pub fn augment_points<R: Rng>(points: &[Vec3], cfg: &AugmentConfig, rng: &mut R) -> Vec<Vec3> {
    if !cfg.enabled || points.is_empty() {
        return points.to_vec();
    }
    let (lo, hi) = cfg.keep_range;
    let frac = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let keep = ((points.len() as f64 * frac).round() as usize).clamp(1, points.len());
    let mut idx = index::sample(rng, points.len(), keep).into_vec();
    idx.sort_unstable();
    let noise = Normal::new(0.0, cfg.jitter.max(0.0)).expect("non-negative std");
    idx.into_iter()
        .map(|i| {
            let p = points[i];
            if cfg.jitter > 0.0 {
                p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
            } else {
                p
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    /// Points fed to the encoder per shape.
    pub encoder_points: usize,
    /// Template vertices supervised per step (0 = all).
    pub target_vertices: usize,
    pub augment: AugmentConfig,
    /// Surface samples per side when measuring the completion error.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for ShapeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            optimizer: OptimConfig::adam(1e-3),
            encoder_points: 2048,
            target_vertices: 0,
            augment: AugmentConfig::default(),
            eval_samples: 4096,
            seed: 0,
        }
    }
}

impl ShapeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.encoder_points == 0 || self.eval_samples == 0 {
            return Err(Error::invalid("batch size and sample counts must be positive"));
        }
        let (lo, hi) = self.augment.keep_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("keep range ({lo}, {hi}) must lie in (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    /// Absent without a validation set.
    pub val_mse: Option<f64>,
}

/// Seed of the canonical (unaugmented) input sample of shape `i`.
fn canonical_seed(i: usize) -> u64 {
    0xC0DE_0000 + i as u64
}

fn mse(a: &[Vec3], b: &[Vec3]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    s / (3 * a.len()) as f64
}

/// Stateful trainer; an epoch can be checkpointed and resumed bitwise.
#[derive(Clone, Debug)]
pub struct ShapeTrainer {
    pub model: ShapeModel<f32>,
    opt: Optimizer<f32>,
    pub config: ShapeTrainConfig,
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl ShapeTrainer {
    pub fn new(arch: ShapeArch, config: ShapeTrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: ShapeModel::new(arch, config.seed)?,
            opt: Optimizer::new(config.optimizer),
            config,
            epoch: 0,
            log: Vec::new(),
        })
    }

    fn check_data(&self, data: &ShapeDataset) -> Result<()> {
        let nv = self.model.template().n_vertices();
        if let Some(m) = data.train.iter().chain(&data.val).find(|m| m.n_vertices() != nv) {
            return Err(Error::invalid(format!(
                "dataset mesh has {} vertices, template has {nv}",
                m.n_vertices()
            )));
        }
        Ok(())
    }

    /// One pass over the training set. Uses an RNG derived from the seed and
    /// the epoch number only.
    pub fn run_epoch(&mut self, data: &ShapeDataset) -> Result<EpochLog> {
        self.check_data(data)?;
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let template = self.model.template().vertices.clone();
        let nv = template.len();
        let m = if cfg.target_vertices == 0 { nv } else { cfg.target_vertices.min(nv) };

        let mut losses = Vec::with_capacity(order.len());
        for batch in order.chunks(cfg.batch_size) {
            self.model.zero_grad();
            for &i in batch {
                let mesh = &data.train[i];
                let sites = sample_sites(mesh, cfg.encoder_points, rng.gen())?;
                let pts: Vec<Vec3> = sites.iter().map(|s| s.position(mesh)).collect();
                let pts = augment_points(&pts, &cfg.augment, &mut rng);
                let mut subset = if m == nv {
                    (0..nv).collect()
                } else {
                    index::sample(&mut rng, nv, m).into_vec()
                };
                subset.sort_unstable();
                let tv: Vec<Vec3> = subset.iter().map(|&k| template[k]).collect();

                let z = self.model.encode_forward(&pts)?;
                let pred = self.model.decode_forward(&z, &tv)?;
                let scale = 2.0 / (3 * m * batch.len()) as f64;
                let mut loss = 0.0;
                let mut g = Vec::with_capacity(3 * m);
                for (r, &k) in subset.iter().enumerate() {
                    for c in 0..3 {
                        let d = pred.data()[3 * r + c] as f64 - mesh.vertices[k][c];
                        loss += d * d;
                        g.push((d * scale) as f32);
                    }
                }
                let loss = loss / (3 * m) as f64;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("training loss became {loss} in epoch {}", self.epoch)));
                }
                losses.push(loss);
                let gz = self.model.decode_backward(&Tensor::new(&[m, 3], g)?, true)?;
                self.model.encode_backward(&gz)?;
            }
            self.opt.step(&mut self.model)?;
        }
        let train_mse = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_mse = self.validation_mse(data)?;
        self.epoch += 1;
        let entry = EpochLog {
            epoch: self.epoch,
            train_mse,
            val_mse,
        };
        self.log.push(entry);
        Ok(entry)
    }

    /// Mean per-coordinate squared vertex error on the validation set with
    /// canonical inputs.
    pub fn validation_mse(&self, data: &ShapeDataset) -> Result<Option<f64>> {
        if data.val.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for (i, mesh) in data.val.iter().enumerate() {
            let (est, _) = complete_shape(&self.model, mesh, self.config.encoder_points, canonical_seed(i))?;
            total += mse(&est.vertices, &mesh.vertices);
        }
        Ok(Some(total / data.val.len() as f64))
    }

    /// Model weights, optimizer state and progress in one weight file.
    pub fn checkpoint(&self) -> NetworkWeights {
        let (steps, opt_state) = self.opt.state_tensors();
        let mut tensors: Vec<(String, Tensor<f32>)> = self
            .model
            .params()
            .into_iter()
            .map(|(n, t)| (format!("model.{n}"), t.clone()))
            .collect();
        tensors.extend(opt_state.into_iter().map(|(n, t)| (format!("opt.{n}"), t)));
        let descriptor = json!({
            "model": "shape-checkpoint",
            "architecture": self.model.arch,
            "config": self.config,
            "epoch": self.epoch,
            "optimizer_steps": steps,
            "log": self.log,
        });
        NetworkWeights::new(descriptor, tensors)
    }

    pub fn from_checkpoint(w: &NetworkWeights) -> Result<Self> {
        let d = &w.descriptor;
        if d.get("model") != Some(&json!("shape-checkpoint")) {
            return Err(Error::ModelMismatch("not a shape training checkpoint".into()));
        }
        let parse = |key: &str| -> Result<serde_json::Value> {
            d.get(key)
                .cloned()
                .ok_or_else(|| Error::ModelMismatch(format!("checkpoint lacks {key}")))
        };
        let arch: ShapeArch = serde_json::from_value(parse("architecture")?)?;
        let config: ShapeTrainConfig = serde_json::from_value(parse("config")?)?;
        let epoch: usize = serde_json::from_value(parse("epoch")?)?;
        let steps: u64 = serde_json::from_value(parse("optimizer_steps")?)?;
        let log: Vec<EpochLog> = serde_json::from_value(parse("log")?)?;
        let mut model = ShapeModel::<f32>::new(arch, 0)?;
        let mut model_w = Vec::new();
        let mut opt_w = Vec::new();
        for (name, t) in &w.tensors {
            if let Some(n) = name.strip_prefix("model.") {
                model_w.push((n.to_string(), t.clone()));
            } else if let Some(n) = name.strip_prefix("opt.") {
                opt_w.push((n.to_string(), t.clone()));
            } else {
                return Err(Error::ModelMismatch(format!("unexpected checkpoint tensor {name}")));
            }
        }
        model.load_params(&NetworkWeights::new(serde_json::Value::Null, model_w))?;
        Ok(Self {
            model,
            opt: Optimizer::from_state(config.optimizer, steps, opt_w)?,
            config,
            epoch,
            log,
        })
    }

    /// Completion error of one complete shape: directed Chamfer from its
    /// surface to the decoded estimate, with canonical sampling.
    pub fn completion_error(model: &ShapeModel<f32>, mesh: &Mesh, encoder_points: usize, eval_samples: usize, i: usize) -> Result<f64> {
        let (est, _) = complete_shape(model, mesh, encoder_points, canonical_seed(i))?;
        let a = sample_surface(mesh, eval_samples, canonical_seed(i) ^ 0xA)?;
        let b = sample_surface(&est, eval_samples, canonical_seed(i) ^ 0xB)?;
        directed_chamfer(&a, &b)
    }

    /// Records the training summary (including `tau_train`) and returns the model.
    pub fn finish(mut self, data: &ShapeDataset) -> Result<ShapeModel<f32>> {
        let c = &self.config;
        let mut tau: f64 = 0.0;
        for (i, mesh) in data.train.iter().enumerate() {
            tau = tau.max(Self::completion_error(&self.model, mesh, c.encoder_points, c.eval_samples, i)?);
        }
        let last = self.log.last().copied();
        self.model.training = Some(TrainingSummary {
            epochs: self.epoch,
            train_mse: last.map_or(0.0, |l| l.train_mse),
            val_mse: last.and_then(|l| l.val_mse),
            tau_train: tau,
            encoder_points: c.encoder_points,
            eval_samples: c.eval_samples,
        });
        Ok(self.model)
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train_shape_model(
    data: &ShapeDataset,
    arch: ShapeArch,
    config: ShapeTrainConfig,
) -> Result<(ShapeModel<f32>, Vec<EpochLog>)> {
    let mut trainer = ShapeTrainer::new(arch, config)?;
    for _ in 0..trainer.config.epochs {
        trainer.run_epoch(data)?;
    }
    let log = trainer.log.clone();
    Ok((trainer.finish(data)?, log))
}
