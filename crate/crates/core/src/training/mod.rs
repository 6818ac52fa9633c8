//! Optimization schedule: flow warm-up on frozen-encoder latents, joint
//! training of encoder, decoder and flow with early stopping on the
//! validation loss, then flow fine-tuning. Plus grid search over model and
//! optimizer settings.

pub mod adam;
mod sweep;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use sweep::{grid_search, Cell, CellOutcome, SweepResult, SweepSpace};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::flows::{fit_flow, mean_log_lik, FlowTrainer};
use crate::model::NatPn;
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tape;
use adam::{collect_grads, Adam};

/// Learning rates searched for tabular data.
pub const LR_RANGE: (f64, f64) = (5e-4, 1e-2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Flow-only epochs before joint training; 0 skips the phase.
    pub warmup_epochs: usize,
    /// Flow-only epochs after joint training; 0 skips the phase.
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Accept a learning rate outside [`LR_RANGE`].
    pub allow_any_lr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            batch_size: 512,
            max_epochs: 1000,
            patience: 50,
            warmup_epochs: 200,
            finetune_epochs: 200,
            seed: 0,
            allow_any_lr: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} is not positive", self.lr)));
        }
        if !self.allow_any_lr && !(LR_RANGE.0..=LR_RANGE.1).contains(&self.lr) {
            return Err(Error::Config(format!(
                "learning rate {} outside [{}, {}]; set allow_any_lr to override",
                self.lr, LR_RANGE.0, LR_RANGE.1
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Mean latent log-likelihood before and after each warm-up epoch.
    pub warmup_log_lik: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Index into `val_loss` of the restored parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub finetune_log_lik: Vec<f64>,
    pub finetune_val_loss: Vec<f64>,
    /// Fine-tune epochs reflected in the returned parameters (0 when none
    /// lowered the validation loss).
    pub finetune_kept: usize,
    /// Validation loss of the returned model.
    pub final_val_loss: f64,
    /// Number of per-row evidence clamps during joint training.
    pub clamp_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub final_metrics: BTreeMap<String, f64>,
    /// Not serialized, so that a stored record is byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    /// True when the loss trajectories of two runs agree bit for bit.
    pub fn same_losses(&self, other: &RunRecord) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.warmup_log_lik) == bits(&other.warmup_log_lik)
            && bits(&self.train_loss) == bits(&other.train_loss)
            && bits(&self.val_loss) == bits(&other.val_loss)
            && bits(&self.finetune_log_lik) == bits(&other.finetune_log_lik)
            && bits(&self.finetune_val_loss) == bits(&other.finetune_val_loss)
            && self.best_epoch == other.best_epoch
    }
}

/// Rows per chunk when computing the validation loss.
const EVAL_CHUNK: usize = 1024;

/// Mean Bayesian loss over a whole split, without gradients.
pub fn split_loss(model: &NatPn, split: &Split) -> Result<f64> {
    let n = split.len();
    if n == 0 {
        return Err(Error::Config("loss over an empty split".into()));
    }
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let tape = Tape::new();
        let p = model.store.bind_frozen(&tape);
        let fwd = model.forward(&p, tape.constant(split.x.select_rows(&idx)))?;
        let loss = model.loss(&fwd, &split.y.select_rows(&idx))?.item()?;
        total += loss * idx.len() as f64;
    }
    let v = total / n as f64;
    if !v.is_finite() {
        return Err(Error::Numeric { stage: "validation loss".into() });
    }
    Ok(v)
}

fn diverged(epoch: usize, e: Error, last: &ParamStore) -> Error {
    match e {
        Error::Diverged { .. } => e,
        e => Error::Diverged {
            epoch,
            message: e.to_string(),
            last_finite: Some(Box::new(last.clone())),
        },
    }
}

fn warmup(model: &mut NatPn, train: &Split, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if cfg.warmup_epochs == 0 {
        return Ok(Vec::new());
    }
    let latents = model.latents(&train.x)?;
    let (flow, store) = model.flow_with_store();
    let rec = fit_flow(flow, store, &latents, cfg.warmup_epochs, cfg.lr, cfg.batch_size, rng)?;
    Ok(rec.mean_log_lik)
}

/// Flow-only epochs on the latents of the selected encoder. The state with
/// the lowest validation loss is kept, which is the starting state when no
/// epoch improves on it.
fn finetune(
    model: &mut NatPn,
    train: &Split,
    val: &Split,
    cfg: &TrainConfig,
    start_loss: f64,
    rng: &mut ChaCha8Rng,
    record: &mut RunRecord,
) -> Result<()> {
    if cfg.finetune_epochs == 0 {
        return Ok(());
    }
    let latents = model.latents(&train.x)?;
    let mut trainer = FlowTrainer::new(&model.store, cfg.lr, cfg.batch_size);
    let mut best = model.store.clone();
    let mut best_loss = start_loss;
    record.finetune_log_lik.push(mean_log_lik(model.flow(), &model.store, &latents)?);
    for epoch in 0..cfg.finetune_epochs {
        let step = (|| -> Result<(f64, f64)> {
            let (flow, store) = model.flow_with_store();
            trainer.epoch(flow, store, &latents, rng)?;
            let ll = mean_log_lik(flow, store, &latents)?;
            Ok((ll, split_loss(model, val)?))
        })();
        let (ll, v) = step.map_err(|e| diverged(epoch, e, &best))?;
        record.finetune_log_lik.push(ll);
        record.finetune_val_loss.push(v);
        if v < best_loss {
            best_loss = v;
            best = model.store.clone();
            record.finetune_kept = epoch + 1;
        }
    }
    model.store = best;
    Ok(())
}

/// Trains `model` in three phases and returns the run record. The model is
/// left at the best-validation parameters of the joint phase, followed by
/// the flow fine-tune.
pub fn fit(model: &mut NatPn, train: &Split, val: &Split, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    if train.x.cols() != model.config.input_dim {
        return Err(Error::Config(format!(
            "model expects {} features, data has {}",
            model.config.input_dim,
            train.x.cols()
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut record = RunRecord {
        seed: cfg.seed,
        ..RunRecord::default()
    };

    record.warmup_log_lik = warmup(model, train, cfg, &mut rng)?;

    let all = ParamGroup::ALL;
    let mut opt = Adam::new(&model.store, cfg.lr);
    let mut best = model.store.clone();
    let mut last_good = model.store.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<f64> {
                let tape = Tape::new();
                let p = model.store.bind_all(&tape);
                let fwd = model.forward(&p, tape.constant(train.x.select_rows(chunk)))?;
                record.clamp_events += fwd.clamped;
                let loss = model.loss(&fwd, &train.y.select_rows(chunk))?;
                let value = loss.item()?;
                let grads = loss.backward()?;
                opt.step(&mut model.store, &collect_grads(&p, &grads), &all)?;
                Ok(value)
            })();
            match step {
                Ok(v) => epoch_loss += v * chunk.len() as f64,
                Err(e) => return Err(diverged(epoch, e, &last_good)),
            }
        }
        let val_loss = split_loss(model, val).map_err(|e| diverged(epoch, e, &last_good))?;
        last_good = model.store.clone();
        record.train_loss.push(epoch_loss / train.len() as f64);
        record.val_loss.push(val_loss);
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.store.clone();
        } else if epoch - best_epoch >= cfg.patience {
            log::debug!("early stop at epoch {epoch}, best {best_epoch}");
            break;
        }
    }
    model.store = best;
    record.best_epoch = best_epoch;
    record.best_val_loss = best_loss;

    finetune(model, train, val, cfg, best_loss, &mut rng, &mut record)?;
    record.final_val_loss = split_loss(model, val)?;
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(record)
}
