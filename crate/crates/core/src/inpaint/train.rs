use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::nn::{NetworkWeights, OptimConfig, Optimizer, Parameterized, Tensor};
use crate::{Error, Result};

use super::data::{AtlasCorpus, Corpus};
use super::loss::{loss_inpaint, LossTerms, LossWeights};
use super::net::{InpaintArch, InpaintNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    /// Train on the main corpus only.
    Scratch,
    /// First `pretrain_iterations` on `pretrain`, then the main corpus.
    PretrainFinetune { pretrain_iterations: usize, pretrain: Corpus },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintTrainConfig {
    /// Iterations on the main corpus.
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimConfig,
    pub loss: LossWeights,
    pub corpus: Corpus,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for InpaintTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch_size: 4,
            optimizer: OptimConfig::adam(2e-3),
            loss: LossWeights::default(),
            corpus: Corpus::Atlas(AtlasCorpus::default()),
            strategy: Strategy::Scratch,
            seed: 0,
        }
    }
}

impl InpaintTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if let Strategy::PretrainFinetune { pretrain, .. } = &self.strategy {
            if pretrain.size() != self.corpus.size() {
                return Err(Error::invalid("pretraining and main corpora must share the image size"));
            }
        }
        Ok(())
    }

    pub fn pretrain_iterations(&self) -> usize {
        match &self.strategy {
            Strategy::Scratch => 0,
            Strategy::PretrainFinetune { pretrain_iterations, .. } => *pretrain_iterations,
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.pretrain_iterations() + self.iterations
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: usize,
    pub phase: String,
    pub loss: f64,
    pub hole: f64,
    pub valid: f64,
    pub style: f64,
    pub tv: f64,
}

/// Stateful trainer; checkpoints resume bitwise.
#[derive(Clone, Debug)]
pub struct InpaintTrainer {
    pub net: InpaintNet<f32>,
    opt: Optimizer<f32>,
    pub config: InpaintTrainConfig,
    pub iteration: usize,
    pub log: Vec<IterLog>,
}

impl InpaintTrainer {
    pub fn new(arch: InpaintArch, config: InpaintTrainConfig) -> Result<Self> {
        config.validate()?;
        let net = InpaintNet::new(arch, config.seed)?;
        let (w, h) = config.corpus.size();
        net.check_size(h as usize, w as usize)?;
        Ok(Self {
            net,
            opt: Optimizer::new(config.optimizer),
            config,
            iteration: 0,
            log: Vec::new(),
        })
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.total_iterations()
    }

    /// One optimizer step on a batch drawn from the seed and the iteration
    /// number only.
    pub fn step(&mut self) -> Result<&IterLog> {
        let cfg = &self.config;
        let (corpus, phase) = match &cfg.strategy {
            Strategy::PretrainFinetune { pretrain_iterations, pretrain } if self.iteration < *pretrain_iterations => {
                (pretrain, "pretrain")
            }
            _ => (&cfg.corpus, "main"),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.iteration as u64 + 1);
        let seeds: Vec<u64> = (0..cfg.batch_size).map(|_| rng.gen()).collect();

        self.net.zero_grad();
        let style = self.net.style_extractor();
        let inv = 1.0 / cfg.batch_size as f32;
        let mut total = 0.0;
        let mut terms = LossTerms::default();
        for s in seeds {
            let sample = corpus.sample(s)?;
            let pred = self.net.forward(&sample.input)?;
            let out = loss_inpaint(&pred, &sample.target, &sample.input, Some(&style), &cfg.loss)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("{m} at iteration {}", self.iteration)),
                    e => e,
                })?;
            total += out.total;
            terms.hole += out.terms.hole;
            terms.valid += out.terms.valid;
            terms.style += out.terms.style;
            terms.tv += out.terms.tv;
            self.net.backward(&out.grad.map(|g| g * inv))?;
        }
        self.opt.step(&mut self.net)?;
        let b = cfg.batch_size as f64;
        self.iteration += 1;
        self.log.push(IterLog {
            iteration: self.iteration,
            phase: phase.into(),
            loss: total / b,
            hole: terms.hole / b,
            valid: terms.valid / b,
            style: terms.style / b,
            tv: terms.tv / b,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    pub fn checkpoint(&self) -> NetworkWeights {
        let (steps, opt_state) = self.opt.state_tensors();
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.net.params().into_iter().map(|(n, t)| (format!("model.{n}"), t.clone())).collect();
        tensors.extend(opt_state.into_iter().map(|(n, t)| (format!("opt.{n}"), t)));
        let descriptor = json!({
            "model": "inpaint-checkpoint",
            "architecture": self.net.arch,
            "config": self.config,
            "iteration": self.iteration,
            "optimizer_steps": steps,
            "log": self.log,
        });
        NetworkWeights::new(descriptor, tensors)
    }

    pub fn from_checkpoint(w: &NetworkWeights) -> Result<Self> {
        let d = &w.descriptor;
        if d.get("model") != Some(&json!("inpaint-checkpoint")) {
            return Err(Error::ModelMismatch("not an inpainting training checkpoint".into()));
        }
        let field = |key: &str| -> Result<serde_json::Value> {
            d.get(key).cloned().ok_or_else(|| Error::ModelMismatch(format!("checkpoint lacks {key}")))
        };
        let arch: InpaintArch = serde_json::from_value(field("architecture")?)?;
        let config: InpaintTrainConfig = serde_json::from_value(field("config")?)?;
        let iteration: usize = serde_json::from_value(field("iteration")?)?;
        let steps: u64 = serde_json::from_value(field("optimizer_steps")?)?;
        let log: Vec<IterLog> = serde_json::from_value(field("log")?)?;
        let mut net = InpaintNet::<f32>::new(arch, 0)?;
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
        net.load_params(&NetworkWeights::new(serde_json::Value::Null, model_w))?;
        Ok(Self {
            net,
            opt: Optimizer::from_state(config.optimizer, steps, opt_w)?,
            config,
            iteration,
            log,
        })
    }
}

/// Runs every configured iteration and returns the network with its loss log.
pub fn train_inpainter(arch: InpaintArch, config: InpaintTrainConfig) -> Result<(InpaintNet<f32>, Vec<IterLog>)> {
    let mut t = InpaintTrainer::new(arch, config)?;
    while !t.done() {
        t.step()?;
    }
    Ok((t.net, t.log))
}
