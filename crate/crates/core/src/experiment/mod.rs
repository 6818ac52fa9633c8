//! Experiment manifests and the drivers behind the command-line tool.
//!
//! One TOML manifest fully describes a run: the dataset manifest it points
//! to, model and optimizer settings, OOD sets, seeds and output directory.
//! All randomness is derived from the seeds, so re-running a manifest
//! rewrites byte-identical checkpoints and reports.

mod plot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use plot::{plot, PlotOutput, PlotSpec};

use crate::data::{make_ood, Dataset, DatasetManifest, OodSet, OodSpec, Task};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expfam::ConjugateParams;
use crate::flows::FlowSpec;
use crate::metrics::{aggregate, evaluate, Aggregate, EvalReport};
use crate::model::{checkpoint, BudgetMode, Ensemble, NatPn, NatPnConfig, Predictor};
use crate::tensor::Tensor;
use crate::training::{fit, grid_search, RunRecord, SweepSpace, TrainConfig};

fn default_hidden() -> Vec<usize> {
    vec![16, 16]
}

fn default_entropy_weight() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub flow: FlowSpec,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "default_entropy_weight")]
    pub entropy_weight: f64,
    #[serde(default)]
    pub budget: BudgetMode,
    #[serde(default)]
    pub prior: Option<ConjugateParams>,
    /// Initial decoder output; for count targets the training mean when absent.
    #[serde(default)]
    pub decoder_init: Option<f64>,
}

fn default_shift_levels() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub name: String,
    /// Dataset manifest, relative to this file.
    pub dataset: PathBuf,
    pub seeds: Vec<u64>,
    /// Output directory, relative to this file.
    pub out: PathBuf,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ood: Vec<OodSpec>,
    /// Standard deviations of the Gaussian input perturbations used for the
    /// confidence-decay table of `ood-report`.
    #[serde(default = "default_shift_levels")]
    pub shift_levels: Vec<f64>,
    #[serde(default)]
    pub sweep: SweepSpace,
    #[serde(default)]
    pub plot: PlotSpec,
}

/// A parsed manifest with its paths resolved.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub manifest: ExperimentManifest,
    pub dataset: DatasetManifest,
    pub out: PathBuf,
}

impl Experiment {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let manifest: ExperimentManifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("experiment manifest: {e}")))?;
        let ds_path = base.join(&manifest.dataset);
        if !ds_path.exists() {
            return Err(Error::Config(format!("dataset manifest {} does not exist", ds_path.display())));
        }
        let dataset = DatasetManifest::load(&ds_path)?;
        let out = base.join(&manifest.out);
        let exp = Experiment { manifest, dataset, out };
        exp.validate()?;
        Ok(exp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("manifest {} does not exist", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifest.seeds.is_empty() {
            return Err(Error::Config("manifest lists no seeds".into()));
        }
        self.dataset.validate()?;
        self.manifest.train.validate()?;
        if self.manifest.shift_levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("shift levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        self.dataset.build()
    }

    /// Model configuration for this dataset.
    pub fn model_config(&self, ds: &Dataset) -> Result<NatPnConfig> {
        let m = &self.manifest.model;
        let mut cfg = NatPnConfig::new(ds.family()?, ds.input_dim(), m.latent_dim, m.flow);
        cfg.encoder_hidden = m.encoder_hidden.clone();
        cfg.entropy_weight = m.entropy_weight;
        cfg.budget = m.budget;
        cfg.prior = m.prior.clone();
        cfg.train_size = Some(ds.train.len());
        cfg.decoder_init = m.decoder_init.or_else(|| {
            (ds.task == Task::Count).then(|| ds.train.y.data().iter().sum::<f64>() / ds.train.len() as f64)
        });
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.manifest.train.clone()
        }
    }

    pub fn ood_sets(&self, ds: &Dataset) -> Result<Vec<OodSet>> {
        let mut sets = Vec::new();
        for spec in &self.manifest.ood {
            sets.extend(make_ood(ds, spec)?);
        }
        Ok(sets)
    }

    pub fn seed_dir(&self, out: &Path, seed: u64) -> PathBuf {
        out.join(format!("seed-{seed}"))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub record: RunRecord,
}

/// Trains one model per seed and writes `seed-<s>/model.ckpt`, `run.json`
/// (the run record, without timing) and `timing.json`.
pub fn train(exp: &Experiment, seeds: &[u64], out: &Path, exec: Exec) -> Result<Vec<TrainOutput>> {
    let ds = exp.build_dataset()?;
    let cfg = exp.model_config(&ds)?;
    let results = exec.map(seeds.len(), |i| -> Result<TrainOutput> {
        let seed = seeds[i];
        let mut model = NatPn::new(cfg.clone(), seed)?;
        let mut record = fit(&mut model, &ds.train, &ds.val, &exp.train_config(seed))?;
        let report = evaluate(&model, &ds, &[], Exec::Sequential)?;
        record.final_metrics = report.flat().into_iter().collect();
        record.best_checkpoint = Some("model.ckpt".into());
        let dir = exp.seed_dir(out, seed);
        let checkpoint = dir.join("model.ckpt");
        write(&checkpoint, checkpoint::to_bytes(&model)?)?;
        write(&dir.join("run.json"), record.to_json())?;
        write(
            &dir.join("timing.json"),
            format!("{{\"wall_time_secs\": {:.3}}}\n", record.wall_time_secs),
        )?;
        log::info!(
            "seed {seed}: best epoch {} val loss {:.5} ({:.1}s)",
            record.best_epoch,
            record.best_val_loss,
            record.wall_time_secs
        );
        Ok(TrainOutput { seed, checkpoint, record })
    });
    results.into_iter().collect()
}

/// Checkpoints written by [`train`] for the manifest's seeds.
pub fn default_checkpoints(exp: &Experiment, out: &Path) -> Vec<PathBuf> {
    exp.manifest
        .seeds
        .iter()
        .map(|&s| exp.seed_dir(out, s).join("model.ckpt"))
        .collect()
}

fn load_models(paths: &[PathBuf], ds: &Dataset) -> Result<Vec<NatPn>> {
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
            }
            let m = checkpoint::load(p)?;
            if !ds.task.matches(m.family()) {
                return Err(Error::Config(format!(
                    "checkpoint {} predicts a {} target but dataset `{}` is a {:?} task",
                    p.display(),
                    m.family().name(),
                    ds.name,
                    ds.task
                )));
            }
            if m.config.input_dim != ds.input_dim() {
                return Err(Error::Config(format!(
                    "checkpoint {} expects {} features, dataset has {}",
                    p.display(),
                    m.config.input_dim,
                    ds.input_dim()
                )));
            }
            Ok(m)
        })
        .collect()
}

fn label(path: &Path) -> String {
    path.parent()
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub reports: Vec<(String, EvalReport)>,
    pub aggregate: Aggregate,
}

/// Evaluates each checkpoint (or their ensemble) on the test split and the
/// manifest's OOD sets. Writes one JSON + CSV report per model and, for
/// several models, the mean ± standard error across them.
pub fn eval(exp: &Experiment, checkpoints: &[PathBuf], ensemble: bool, out: &Path, exec: Exec) -> Result<EvalOutput> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints to evaluate".into()));
    }
    let ds = exp.build_dataset()?;
    let ood = exp.ood_sets(&ds)?;
    let models = load_models(checkpoints, &ds)?;
    let dir = out.join("eval");
    let reports: Vec<(String, EvalReport)> = if ensemble {
        let ens = Ensemble::new(models)?;
        vec![(format!("ensemble-{}", checkpoints.len()), evaluate(&ens, &ds, &ood, exec)?)]
    } else {
        models
            .iter()
            .zip(checkpoints)
            .map(|(m, p)| Ok((label(p), evaluate(m, &ds, &ood, exec)?)))
            .collect::<Result<_>>()?
    };
    for (name, r) in &reports {
        write(&dir.join(format!("{name}.json")), r.to_json())?;
        write(&dir.join(format!("{name}.csv")), r.to_csv())?;
    }
    let only: Vec<EvalReport> = reports.iter().map(|r| r.1.clone()).collect();
    let agg = aggregate(&only)?;
    write(&dir.join("aggregate.json"), agg.to_json())?;
    write(&dir.join("aggregate.csv"), agg.to_csv())?;
    Ok(EvalOutput { reports, aggregate: agg })
}

/// Runs the manifest's sweep space with its first seed. Writes
/// `sweep/leaderboard.csv`, `sweep/best.json` and `sweep/best.ckpt`.
pub fn sweep(exp: &Experiment, out: &Path, exec: Exec) -> Result<crate::training::SweepResult> {
    let ds = exp.build_dataset()?;
    let cfg = exp.model_config(&ds)?;
    let tc = exp.train_config(exp.manifest.seeds[0]);
    let result = grid_search(&exp.manifest.sweep, &cfg, &tc, &ds, exec)?;
    let dir = out.join("sweep");
    write(&dir.join("leaderboard.csv"), result.leaderboard_csv())?;
    let best = result
        .best
        .ok_or_else(|| Error::Numeric { stage: "sweep: every cell failed".into() })?;
    let outcome = &result.outcomes[best];
    let val = outcome.result.as_ref().map(|r| r.0.best_val_loss).unwrap_or(f64::NAN);
    let best_json = serde_json::json!({ "cell": outcome.cell, "best_val_loss": val, "seed": outcome.seed });
    write(&dir.join("best.json"), serde_json::to_string_pretty(&best_json).expect("json") + "\n")?;
    if let Some(m) = &result.best_model {
        write(&dir.join("best.ckpt"), checkpoint::to_bytes(m)?)?;
    }
    Ok(result)
}

/// Per-checkpoint OOD detection plus confidence decay under Gaussian input
/// perturbations of the test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub model: String,
    pub eval: EvalReport,
    /// `(σ, mean evidence at σ / mean clean evidence)`, σ ascending.
    pub confidence_decay: Vec<(f64, f64)>,
}

/// Test inputs plus `N(0, σ²)` noise; `σ = 0` returns the clean inputs.
pub fn shift_inputs(x: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noise = crate::data::gaussian_noise(x.rows(), x.cols(), sigma, seed)?;
    Ok(Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + noise.get(i, j)))
}

pub fn ood_report(exp: &Experiment, checkpoints: &[PathBuf], out: &Path, exec: Exec) -> Result<Vec<OodReport>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints for the OOD report".into()));
    }
    let ds = exp.build_dataset()?;
    let ood = exp.ood_sets(&ds)?;
    let models = load_models(checkpoints, &ds)?;
    let mut levels = exp.manifest.shift_levels.clone();
    levels.sort_by(f64::total_cmp);
    let shifted = levels
        .iter()
        .enumerate()
        .map(|(k, &s)| shift_inputs(&ds.test.x, s, k as u64 + 1))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    for (m, path) in models.iter().zip(checkpoints) {
        let eval = evaluate(m, &ds, &ood, exec)?;
        let clean: Vec<f64> = m.predict_all(&ds.test.x, exec)?.iter().map(|p| p.n_post).collect();
        let shifted_ev = shifted
            .iter()
            .map(|x| Ok(m.predict_all(x, exec)?.iter().map(|p| p.n_post).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let ratios = crate::metrics::confidence_ratio(&clean, &shifted_ev)?;
        reports.push(OodReport {
            model: label(path),
            eval,
            confidence_decay: levels.iter().copied().zip(ratios).collect(),
        });
    }
    let dir = out.join("ood");
    let mut csv = String::from("model,set,alea_aucpr,epist_aucpr,alea_aucroc,epist_aucroc,confidence_ratio\n");
    for r in &reports {
        write(&dir.join(format!("{}.json", r.model)), serde_json::to_string_pretty(r).expect("json") + "\n")?;
        for (name, s) in &r.eval.ood {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model, name, s.alea_aucpr, s.epist_aucpr, s.alea_aucroc, s.epist_aucroc, s.confidence_ratio
            ));
        }
        for (sigma, ratio) in &r.confidence_decay {
            csv.push_str(&format!("{},shift_sigma={sigma},,,,,{ratio}\n", r.model));
        }
    }
    write(&dir.join("ood_report.csv"), csv)?;
    Ok(reports)
}
