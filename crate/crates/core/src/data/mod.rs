//! Tabular datasets: ingestion, splitting, standardization and the
//! out-of-distribution sets used for evaluation.
//!
//! Standardization statistics always come from the training split alone and
//! are then applied unchanged to validation, test and OOD rows.

mod manifest;
mod ood;
mod table;
pub mod toys;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use manifest::DatasetManifest;
pub use ood::{gaussian_noise, make_ood, oodom_scale, OodSpec, DEFAULT_OODOM_FACTOR};
pub use table::{read_csv, Table};
pub use toys::{make_toys, ToyKind, ToySpec};

use crate::error::{Error, Result};
use crate::expfam::FamilyKind;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    /// Real-valued target with a Normal likelihood; targets are standardized.
    Regression,
    /// Count target with a Poisson likelihood; targets stay on their
    /// natural scale since the support is the non-negative integers.
    Count,
}

impl Task {
    pub fn family(self, classes: Option<usize>) -> Result<FamilyKind> {
        match self {
            Task::Classification => classes
                .map(|classes| FamilyKind::Categorical { classes })
                .ok_or_else(|| Error::Config("classification task without a class count".into())),
            Task::Regression => Ok(FamilyKind::Normal),
            Task::Count => Ok(FamilyKind::Poisson),
        }
    }

    pub fn matches(self, family: FamilyKind) -> bool {
        matches!(
            (self, family),
            (Task::Classification, FamilyKind::Categorical { .. })
                | (Task::Regression, FamilyKind::Normal)
                | (Task::Count, FamilyKind::Poisson)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    /// Population mean and standard deviation. A constant column gets a unit
    /// scale so standardization leaves it at zero instead of dividing by zero.
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        ColumnStats {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// How rows are divided into train / validation / test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// 70 / 15 / 15 of the shuffled rows.
    Standard { seed: u64 },
    /// A separate test file; the main file is split 80 / 20 into train and
    /// validation.
    DedicatedTest { seed: u64 },
}

impl SplitSpec {
    pub fn seed(&self) -> u64 {
        match *self {
            SplitSpec::Standard { seed } | SplitSpec::DedicatedTest { seed } => seed,
        }
    }
}

/// Shuffles `0..n` with `seed` and cuts it by `fractions` (the last part takes
/// the remainder). Parts are disjoint and together cover every index.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len() + 1);
    let mut start = 0;
    for f in fractions {
        let len = ((f * n as f64).round() as usize).min(n - start);
        parts.push(idx[start..start + len].to_vec());
        start += len;
    }
    parts.push(idx[start..].to_vec());
    parts
}

/// Rows held out of training and returned as OOD sets instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Holdout {
    /// Remove these class labels; surviving labels are renumbered 0..C'.
    Category { classes: Vec<usize> },
    /// Keep rows whose `column` takes one of the `keep` values; every other
    /// value becomes its own OOD set. The column is then dropped everywhere.
    AttributeValue {
        column: String,
        keep: Vec<f64>,
        /// Display names for held-out values, keyed by the value as written.
        #[serde(default)]
        names: BTreeMap<String, String>,
    },
}

/// Which columns are features and which is the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub task: Task,
    pub target: String,
    /// Feature columns; every column except the target and `drop` if absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub drop: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Standardized features, rows × D.
    pub x: Tensor,
    /// Targets as a column: class index, standardized real, or raw count.
    pub y: Tensor,
    /// Row indices into the source table.
    pub rows: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Inputs of an out-of-distribution set, already standardized.
#[derive(Clone, Debug, PartialEq)]
pub struct OodSet {
    pub name: String,
    pub x: Tensor,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub classes: Option<usize>,
    pub feature_names: Vec<String>,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub feature_stats: Vec<ColumnStats>,
    pub target_stats: Option<ColumnStats>,
    /// Sets produced by a [`Holdout`], if any.
    pub held_out: Vec<OodSet>,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn family(&self) -> Result<FamilyKind> {
        self.task.family(self.classes)
    }

    /// Maps a model-scale target back to original units.
    pub fn target_to_original(&self, v: f64) -> f64 {
        self.target_stats.map_or(v, |s| s.invert(v))
    }

    /// Standardizes raw feature rows with the training statistics.
    pub fn standardize(&self, raw: &Tensor) -> Result<Tensor> {
        if raw.cols() != self.input_dim() {
            return Err(Error::Dimension {
                op: "standardize",
                lhs: vec![raw.rows(), raw.cols()],
                rhs: vec![self.input_dim()],
            });
        }
        Ok(Tensor::from_fn(raw.rows(), raw.cols(), |i, j| {
            self.feature_stats[j].apply(raw.get(i, j))
        }))
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} features, train/val/test = {}/{}/{}, {} held-out set(s)",
            self.name,
            self.input_dim(),
            self.train.len(),
            self.val.len(),
            self.test.len(),
            self.held_out.len()
        )
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Builds a standardized, split dataset from a raw table.
pub fn build(
    name: &str,
    table: &Table,
    test_table: Option<&Table>,
    schema: &Schema,
    split: SplitSpec,
    holdout: Option<&Holdout>,
) -> Result<Dataset> {
    let col = |c: &str| {
        table
            .column_index(c)
            .ok_or_else(|| Error::Config(format!("dataset `{name}` has no column `{c}`")))
    };
    let target = col(&schema.target)?;
    let mut dropped: Vec<&str> = schema.drop.iter().map(String::as_str).collect();
    if let Some(Holdout::AttributeValue { column, .. }) = holdout {
        dropped.push(column);
    }
    for d in &dropped {
        col(d)?;
    }
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.iter().filter(|c| !dropped.contains(&c.as_str())).cloned().collect(),
        None => table
            .columns
            .iter()
            .filter(|c| **c != schema.target && !dropped.contains(&c.as_str()))
            .cloned()
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Config(format!("dataset `{name}` has no feature columns")));
    }
    let features = feature_names.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    if let Some(t) = test_table {
        if t.columns != table.columns {
            return Err(Error::Config("test file columns differ from the main file".into()));
        }
    }

    // Label renumbering for classification.
    let mut label_map: BTreeMap<i64, usize> = BTreeMap::new();
    let removed: Vec<usize> = match holdout {
        Some(Holdout::Category { classes }) => classes.clone(),
        _ => vec![],
    };
    if schema.task == Task::Classification {
        for r in table.rows.iter().chain(test_table.iter().flat_map(|t| t.rows.iter())) {
            let y = r[target];
            if y < 0.0 || y.fract() != 0.0 {
                return Err(Error::Config(format!("class label {y} is not a non-negative integer")));
            }
            if !removed.contains(&(y as usize)) {
                label_map.insert(y as i64, 0);
            }
        }
        for (k, v) in label_map.values_mut().enumerate() {
            *v = k;
        }
        if label_map.len() < 2 {
            return Err(Error::Config("classification needs at least two retained classes".into()));
        }
    } else if !removed.is_empty() {
        return Err(Error::Config("category holdout requires a classification task".into()));
    }
    if schema.task == Task::Count {
        if let Some(r) = table.rows.iter().find(|r| r[target] < 0.0 || r[target].fract() != 0.0) {
            return Err(Error::Config(format!("count target {} is not a non-negative integer", r[target])));
        }
    }

    // Partition rows into in-distribution and held-out groups.
    let mut id_rows = Vec::new();
    let mut held: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        match holdout {
            Some(Holdout::Category { classes }) if classes.contains(&(r[target] as usize)) => {
                held.entry("left_out_classes".into()).or_default().push(i)
            }
            Some(Holdout::AttributeValue { column, keep, names }) => {
                let v = r[col(column)?];
                if keep.contains(&v) {
                    id_rows.push(i);
                } else {
                    let key = format_value(v);
                    let label = names.get(&key).cloned().unwrap_or_else(|| format!("{column}={key}"));
                    held.entry(label).or_default().push(i);
                }
            }
            _ => id_rows.push(i),
        }
    }

    let (train_rows, val_rows, test_rows) = match (split, test_table) {
        (SplitSpec::Standard { seed }, None) => {
            let p = split_indices(id_rows.len(), &[0.70, 0.15], seed);
            let pick = |v: &Vec<usize>| v.iter().map(|&k| id_rows[k]).collect::<Vec<_>>();
            (pick(&p[0]), pick(&p[1]), pick(&p[2]))
        }
        (SplitSpec::DedicatedTest { seed }, Some(t)) => {
            let p = split_indices(id_rows.len(), &[0.80], seed);
            let pick = |v: &Vec<usize>| v.iter().map(|&k| id_rows[k]).collect::<Vec<_>>();
            // Test rows index the test table, offset past the main table.
            let off = table.rows.len();
            (pick(&p[0]), pick(&p[1]), (0..t.rows.len()).map(|k| off + k).collect())
        }
        (SplitSpec::Standard { .. }, Some(_)) => {
            return Err(Error::Config("a test file requires the dedicated_test split".into()))
        }
        (SplitSpec::DedicatedTest { .. }, None) => {
            return Err(Error::Config("dedicated_test split requires a test file".into()))
        }
    };
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{name}`: holdout or split leaves an empty training or validation set"
        )));
    }
    let row_of = |i: usize| -> &Vec<f64> {
        if i < table.rows.len() {
            &table.rows[i]
        } else {
            &test_table.expect("test rows only exist with a test table").rows[i - table.rows.len()]
        }
    };

    let feature_stats: Vec<ColumnStats> = features
        .iter()
        .map(|&j| ColumnStats::of(train_rows.iter().map(|&i| row_of(i)[j])))
        .collect();
    let target_stats = (schema.task == Task::Regression)
        .then(|| ColumnStats::of(train_rows.iter().map(|&i| row_of(i)[target])));
    let make_x = |rows: &[usize]| {
        Tensor::from_fn(rows.len(), features.len(), |r, c| {
            feature_stats[c].apply(row_of(rows[r])[features[c]])
        })
    };
    let make_y = |rows: &[usize]| -> Result<Tensor> {
        let vals = rows
            .iter()
            .map(|&i| {
                let y = row_of(i)[target];
                match schema.task {
                    Task::Classification => label_map
                        .get(&(y as i64))
                        .map(|&k| k as f64)
                        .ok_or_else(|| Error::Config(format!("test label {y} unseen in training classes"))),
                    Task::Regression => Ok(target_stats.expect("regression stats").apply(y)),
                    Task::Count => Ok(y),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Tensor::new(rows.len(), 1, vals)
    };
    let split_of = |rows: Vec<usize>| -> Result<Split> {
        Ok(Split {
            x: make_x(&rows),
            y: make_y(&rows)?,
            rows,
        })
    };
    let held_out = held
        .into_iter()
        .map(|(name, rows)| OodSet { name, x: make_x(&rows) })
        .collect();
    let ds = Dataset {
        name: name.to_string(),
        task: schema.task,
        classes: (schema.task == Task::Classification).then_some(label_map.len()),
        feature_names,
        train: split_of(train_rows)?,
        val: split_of(val_rows)?,
        test: split_of(test_rows)?,
        feature_stats,
        target_stats,
        held_out,
    };
    log::info!("{}", ds.summary());
    Ok(ds)
}
