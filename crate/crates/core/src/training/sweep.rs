use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{fit, RunRecord, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flows::FlowSpec;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{BudgetMode, NatPn, NatPnConfig};

/// Values tried for each swept setting. Empty lists fall back to the base
/// configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpace {
    pub latent_dim: Vec<usize>,
    pub flow: Vec<FlowSpec>,
    pub entropy_weight: Vec<f64>,
    pub lr: Vec<f64>,
    pub budget: Vec<BudgetMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub latent_dim: usize,
    pub flow: FlowSpec,
    pub entropy_weight: f64,
    pub lr: f64,
    pub budget: BudgetMode,
}

impl SweepSpace {
    /// Cartesian product in a fixed order (last field varies fastest).
    pub fn cells(&self, model: &NatPnConfig, train: &TrainConfig) -> Vec<Cell> {
        fn or<T: Clone>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for &h in &or(&self.latent_dim, model.latent_dim) {
            for &flow in &or(&self.flow, model.flow) {
                for &ew in &or(&self.entropy_weight, model.entropy_weight) {
                    for &lr in &or(&self.lr, train.lr) {
                        for &budget in &or(&self.budget, model.budget) {
                            out.push(Cell {
                                latent_dim: h,
                                flow,
                                entropy_weight: ew,
                                lr,
                                budget,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub seed: u64,
    pub result: std::result::Result<(RunRecord, EvalReport), String>,
    pub wall_time_secs: f64,
}

#[derive(Debug)]
pub struct SweepResult {
    pub outcomes: Vec<CellOutcome>,
    /// Index of the lowest validation loss among cells that trained.
    pub best: Option<usize>,
    pub best_model: Option<NatPn>,
}

impl SweepResult {
    /// One row per cell: settings, status, validation loss, test metrics,
    /// wall time and seed.
    pub fn leaderboard_csv(&self) -> String {
        let metric_names = ["accuracy", "brier", "rmse", "calibration"];
        let mut s = String::from("latent_dim,flow,entropy_weight,lr,budget,seed,status,best_val_loss,best_epoch");
        for m in metric_names {
            write!(s, ",test_{m}").unwrap();
        }
        s.push_str(",wall_time_secs\n");
        for o in &self.outcomes {
            let c = &o.cell;
            write!(
                s,
                "{},{},{},{},{},{}",
                c.latent_dim,
                c.flow,
                c.entropy_weight,
                c.lr,
                c.budget.name(),
                o.seed
            )
            .unwrap();
            match &o.result {
                Ok((rec, rep)) => {
                    write!(s, ",ok,{},{}", rec.best_val_loss, rec.best_epoch).unwrap();
                    for v in [rep.accuracy, rep.brier, rep.rmse, rep.calibration] {
                        match v {
                            Some(v) => write!(s, ",{v}").unwrap(),
                            None => s.push(','),
                        }
                    }
                }
                Err(msg) => {
                    let msg = msg.replace([',', '\n'], ";");
                    write!(s, ",failed: {msg},,,,,,").unwrap();
                }
            }
            writeln!(s, ",{:.3}", o.wall_time_secs).unwrap();
        }
        s
    }
}

/// Trains every cell of `space` on the dataset and selects the lowest
/// validation loss. Cells run concurrently under `exec`; each fit is
/// sequential and seeded by `train.seed`, so results do not depend on the
/// worker count. Failed cells are logged and kept in the leaderboard.
pub fn grid_search(
    space: &SweepSpace,
    model: &NatPnConfig,
    train: &TrainConfig,
    ds: &Dataset,
    exec: Exec,
) -> Result<SweepResult> {
    let cells = space.cells(model, train);
    let runs = exec.map(cells.len(), |i| {
        let cell = &cells[i];
        let started = Instant::now();
        let mut cfg = model.clone();
        cfg.latent_dim = cell.latent_dim;
        cfg.flow = cell.flow;
        cfg.entropy_weight = cell.entropy_weight;
        cfg.budget = cell.budget;
        let tc = TrainConfig { lr: cell.lr, ..train.clone() };
        let result = (|| -> Result<(NatPn, RunRecord, EvalReport)> {
            let mut m = NatPn::new(cfg, tc.seed)?;
            let rec = fit(&mut m, &ds.train, &ds.val, &tc)?;
            let rep = evaluate(&m, ds, &[], Exec::Sequential)?;
            Ok((m, rec, rep))
        })();
        (result, started.elapsed().as_secs_f64())
    });
    let mut outcomes = Vec::with_capacity(cells.len());
    let mut best: Option<(usize, f64)> = None;
    let mut best_model = None;
    for (i, ((result, secs), cell)) in runs.into_iter().zip(cells).enumerate() {
        let result = match result {
            Ok((m, rec, rep)) => {
                if best.is_none_or(|(_, l)| rec.best_val_loss < l) {
                    best = Some((i, rec.best_val_loss));
                    best_model = Some(m);
                }
                Ok((rec, rep))
            }
            Err(e) => {
                if !e.is_numeric() && !matches!(e, Error::Domain(_)) {
                    return Err(e);
                }
                log::warn!("sweep cell {i} ({} / H={}) failed: {e}", cell.flow, cell.latent_dim);
                Err(e.to_string())
            }
        };
        outcomes.push(CellOutcome {
            cell,
            seed: train.seed,
            result,
            wall_time_secs: secs,
        });
    }
    Ok(SweepResult {
        outcomes,
        best: best.map(|b| b.0),
        best_model,
    })
}
