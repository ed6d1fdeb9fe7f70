//! Truncated-BPTT training with plain SGD, perplexity evaluation and
//! checkpoints.

mod checkpoint;
mod eval;

use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{Graph, GraphError};
use crate::corpus::CorpusBatch;
use crate::kv::{KvError, KvMap};
use crate::model::{forward, DropoutMasks, LanguageModel, ModelError, RecurrentState};
use crate::objective::{total_loss, LossInputs, LossWeights};
use crate::rng::stream;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION};
pub use eval::{evaluate_model, evaluate_perplexity, ModelScorer, SequenceScorer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {dump}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        dump: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub bptt: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Evaluate on the validation split every this many epochs.
    pub eval_every: usize,
    /// Learning-rate multiplier applied after `patience` evaluations
    /// without improvement.
    pub lr_decay: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5.0,
            clip: 0.25,
            epochs: 10,
            batch_size: 20,
            bptt: 35,
            seed: 1,
            loss: LossWeights::default(),
            eval_every: 1,
            lr_decay: 0.5,
            patience: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip norm must be positive");
        }
        if self.epochs == 0 {
            return bad("at least one epoch is required");
        }
        if self.batch_size == 0 || self.bptt == 0 {
            return bad("batch size and bptt must be positive");
        }
        if self.eval_every == 0 {
            return bad("evaluation cadence must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning-rate decay must lie in (0, 1]");
        }
        self.loss.validate().map_err(TrainError::Config)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("lr", self.lr);
        kv.set("clip", self.clip);
        kv.set("epochs", self.epochs);
        kv.set("batch", self.batch_size);
        kv.set("bptt", self.bptt);
        kv.set("seed", self.seed);
        kv.set("ar", self.loss.activation);
        kv.set("tar", self.loss.temporal);
        kv.set("wd", self.loss.weight_decay);
        kv.set("ls", self.loss.ls_enabled);
        kv.set("ls_detached", self.loss.ls_detached);
        kv.set("eval_every", self.eval_every);
        kv.set("lr_decay", self.lr_decay);
        kv.set("patience", self.patience);
        kv
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self, KvError> {
        let d = Self::default();
        Ok(Self {
            lr: kv.get_or("lr", d.lr)?,
            clip: kv.get_or("clip", d.clip)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch", d.batch_size)?,
            bptt: kv.get_or("bptt", d.bptt)?,
            seed: kv.get_or("seed", d.seed)?,
            loss: LossWeights {
                activation: kv.get_or("ar", d.loss.activation)?,
                temporal: kv.get_or("tar", d.loss.temporal)?,
                weight_decay: kv.get_or("wd", d.loss.weight_decay)?,
                ls_enabled: kv.get_or("ls", d.loss.ls_enabled)?,
                ls_detached: kv.get_or("ls_detached", d.loss.ls_detached)?,
            },
            eval_every: kv.get_or("eval_every", d.eval_every)?,
            lr_decay: kv.get_or("lr_decay", d.lr_decay)?,
            patience: kv.get_or("patience", d.patience)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub step: u64,
    /// Evaluations since the validation perplexity last improved.
    pub bad_evals: u32,
    /// Epochs completed.
    pub epoch: u32,
    pub best_valid: f64,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            bad_evals: 0,
            epoch: 0,
            best_valid: f64::INFINITY,
        }
    }

    /// Records a validation perplexity and decays the rate on a plateau.
    pub fn observe_validation(&mut self, ppl: f64, config: &TrainConfig) {
        if ppl < self.best_valid {
            self.best_valid = ppl;
            self.bad_evals = 0;
        } else {
            self.bad_evals += 1;
            if self.bad_evals as usize >= config.patience {
                self.lr *= config.lr_decay;
                self.bad_evals = 0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_ce: f64,
    pub train_total: f64,
    pub mean_ls_factor: f64,
    pub floor_hits: usize,
    /// Largest pre-clipping gradient norm seen.
    pub max_grad_norm: f64,
    pub batches: usize,
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

fn diagnostic_dump(model: &LanguageModel, cause: &str) -> String {
    let norms: Vec<String> = model
        .params
        .named()
        .iter()
        .map(|(n, t)| format!("{n}={:.4e}", t.sum_squares().sqrt()))
        .collect();
    format!("{cause}; parameter norms: {}", norms.join(" "))
}

/// One pass of forward, loss, backward, clipping and SGD over `batches`.
pub fn train_epoch(
    model: &mut LanguageModel,
    batches: &[CorpusBatch],
    config: &TrainConfig,
    opt: &mut OptimizerState,
) -> Result<EpochMetrics, TrainError> {
    config.validate()?;
    if batches.is_empty() {
        return Err(TrainError::Config("no training batches".into()));
    }
    let epoch = opt.epoch as usize + 1;
    let mos = model.config.mos.clone();
    let mut rng = stream(config.seed, &format!("dropout/{epoch}"));
    let mut state = RecurrentState::zeros(&mos, batches[0].batch_size);
    let mut sums = (0.0, 0.0, 0.0);
    let mut floor_hits = 0;
    let mut max_grad_norm: f64 = 0.0;

    for (bi, batch) in batches.iter().enumerate() {
        if batch.batch_size != state.layers[0].0.shape()[0] {
            state = RecurrentState::zeros(&mos, batch.batch_size);
        }
        let masks = DropoutMasks::sample(&mos, batch.batch_size, &mut rng);
        let mut graph = Graph::new();
        let built = forward(&mut graph, &model.params, &model.config, batch, &state, &masks, true)
            .and_then(|pass| {
                let inputs = LossInputs::from_forward(&pass, &model.config, batch.batch_size);
                let (nodes, breakdown) =
                    total_loss(&mut graph, &inputs, &batch.targets_time_major(), &config.loss)?;
                Ok((pass, nodes, breakdown))
            });
        let (pass, nodes, breakdown) = match built {
            Ok(b) if b.2.total.is_finite() => b,
            Ok((_, _, breakdown)) => {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    dump: diagnostic_dump(model, &format!("{breakdown:?}")),
                })
            }
            Err(ModelError::Graph(GraphError::NonFinite(msg))) => {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    dump: diagnostic_dump(model, &msg),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let grads = graph.backward(nodes.total)?;
        let mut g: Vec<Tensor> = pass.nodes.all().iter().map(|&n| grads.get(n)).collect();
        drop(graph);
        max_grad_norm = max_grad_norm.max(clip_global_norm(&mut g, config.clip));
        for (p, g) in model.params.tensors_mut().into_iter().zip(&g) {
            for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                *x = (*x - opt.lr * d) as f32 as f64;
            }
        }
        opt.step += 1;
        state = pass.backbone.state;
        sums.0 += breakdown.ce;
        sums.1 += breakdown.total;
        sums.2 += breakdown.ls_factor;
        floor_hits += breakdown.floor_hits;
    }
    opt.epoch += 1;
    let n = batches.len() as f64;
    Ok(EpochMetrics {
        epoch,
        train_ce: sums.0 / n,
        train_total: sums.1 / n,
        mean_ls_factor: sums.2 / n,
        floor_hits,
        max_grad_norm,
        batches: batches.len(),
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ce: f64,
    pub train_total: f64,
    /// `NaN` when the epoch was not evaluated.
    pub valid_ppl: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// `epoch, train-ce, train-total, valid-ppl, wall-seconds`, tab-separated.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.3}",
            self.epoch, self.train_ce, self.train_total, self.valid_ppl, self.wall_seconds
        )
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 5 {
            return None;
        }
        Some(Self {
            epoch: f[0].parse().ok()?,
            train_ce: f[1].parse().ok()?,
            train_total: f[2].parse().ok()?,
            valid_ppl: f[3].parse().ok()?,
            wall_seconds: f[4].parse().ok()?,
        })
    }

    /// Every column except wall time, compared bitwise.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_ce.to_bits() == other.train_ce.to_bits()
            && self.train_total.to_bits() == other.train_total.to_bits()
            && self.valid_ppl.to_bits() == other.valid_ppl.to_bits()
    }
}

/// Runs `config.epochs` epochs from the current optimizer state, evaluating
/// on `valid` at the configured cadence. `on_epoch` sees the model after
/// each epoch and may persist it.
pub fn train<F>(
    model: &mut LanguageModel,
    train_batches: &[CorpusBatch],
    valid_batches: &[CorpusBatch],
    config: &TrainConfig,
    opt: &mut OptimizerState,
    mut on_epoch: F,
) -> Result<Vec<EpochRecord>, TrainError>
where
    F: FnMut(&LanguageModel, &OptimizerState, &EpochRecord) -> Result<(), TrainError>,
{
    config.validate()?;
    let mut records = Vec::new();
    while (opt.epoch as usize) < config.epochs {
        let start = Instant::now();
        let m = train_epoch(model, train_batches, config, opt)?;
        let valid_ppl = if !valid_batches.is_empty() && m.epoch % config.eval_every == 0 {
            let ppl = evaluate_model(model, valid_batches)?;
            opt.observe_validation(ppl, config);
            ppl
        } else {
            f64::NAN
        };
        let record = EpochRecord {
            epoch: m.epoch,
            train_ce: m.train_ce,
            train_total: m.train_total,
            valid_ppl,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(model, opt, &record)?;
        records.push(record);
    }
    Ok(records)
}
