use rand::seq::SliceRandom;
use rand::Rng;

use super::FlowDensity;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::{Tape, Tensor};
use crate::training::adam::{collect_grads, Adam};

#[derive(Clone, Debug, Default)]
pub struct FlowFitRecord {
    /// Mean log-likelihood of all latents after each epoch, preceded by the
    /// value before training.
    pub mean_log_lik: Vec<f64>,
}

/// Mean log-density of `latents` under the flow.
pub fn mean_log_lik(flow: &FlowDensity, store: &ParamStore, latents: &Tensor) -> Result<f64> {
    let lp = flow.log_prob_values(store, latents)?;
    let v = lp.iter().sum::<f64>() / lp.len() as f64;
    if !v.is_finite() {
        return Err(Error::Numeric { stage: "flow fit".into() });
    }
    Ok(v)
}

/// Maximum-likelihood optimizer for the flow parameters alone. Other
/// parameter groups are never touched.
pub struct FlowTrainer {
    opt: Adam,
    batch_size: usize,
}

impl FlowTrainer {
    pub fn new(store: &ParamStore, lr: f64, batch_size: usize) -> Self {
        FlowTrainer {
            opt: Adam::new(store, lr),
            batch_size: batch_size.max(1),
        }
    }

    /// One shuffled pass over `latents`. On failure the store may hold a
    /// partially updated state.
    pub fn epoch(&mut self, flow: &FlowDensity, store: &mut ParamStore, latents: &Tensor, rng: &mut impl Rng) -> Result<()> {
        let mut idx: Vec<usize> = (0..latents.rows()).collect();
        idx.shuffle(rng);
        for chunk in idx.chunks(self.batch_size) {
            let tape = Tape::new();
            let p = store.bind(&tape, &[ParamGroup::Flow]);
            let z = tape.constant(latents.select_rows(chunk));
            let loss = flow.log_prob(&p, z)?.mean()?.neg()?;
            let grads = loss.backward()?;
            self.opt.step(store, &collect_grads(&p, &grads), &[ParamGroup::Flow])?;
        }
        Ok(())
    }
}

/// Maximum-likelihood training of the flow parameters alone on a fixed set
/// of latents.
pub fn fit_flow(
    flow: &FlowDensity,
    store: &mut ParamStore,
    latents: &Tensor,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<FlowFitRecord> {
    if latents.rows() == 0 {
        return Err(Error::Contract("flow fit on an empty latent batch".into()));
    }
    let mut record = FlowFitRecord {
        mean_log_lik: vec![mean_log_lik(flow, store, latents)?],
    };
    let mut trainer = FlowTrainer::new(store, lr, batch_size);
    let mut last_good = store.clone();
    for epoch in 0..epochs {
        let ll = trainer
            .epoch(flow, store, latents, rng)
            .and_then(|_| mean_log_lik(flow, store, latents));
        match ll {
            Ok(v) => {
                record.mean_log_lik.push(v);
                last_good = store.clone();
            }
            Err(e) => return Err(diverged(epoch, e, last_good)),
        }
    }
    Ok(record)
}

fn diverged(epoch: usize, e: Error, last: ParamStore) -> Error {
    Error::Diverged {
        epoch,
        message: e.to_string(),
        last_finite: Some(Box::new(last)),
    }
}
