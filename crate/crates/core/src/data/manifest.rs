use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build, make_toys, read_csv, Dataset, Holdout, Schema, SplitSpec, Task, ToySpec};
use crate::error::{Error, Result};

/// Dataset description stored as TOML. Relative paths resolve against the
/// manifest's own directory.
///
/// ```toml
/// name = "concrete"
/// task = "regression"
/// path = "../../data/concrete.csv"
/// target = "compressive_strength"
/// split_seed = 0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub toy: Option<ToySpec>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub holdout: Option<Holdout>,
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("dataset manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.path = m.path.map(|p| base.join(p));
        m.test_path = m.test_path.map(|p| base.join(p));
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.toy) {
            (Some(p), None) if !p.exists() => {
                Err(Error::Config(format!("dataset file {} does not exist", p.display())))
            }
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Config("dataset manifest needs exactly one of `path` or `toy`".into())),
        }
    }

    pub fn build(&self) -> Result<Dataset> {
        self.validate()?;
        let (table, default_target) = match (&self.path, &self.toy) {
            (Some(p), _) => (read_csv(p)?, None),
            (None, Some(t)) => {
                let tbl = make_toys(t)?;
                let target = tbl.columns.last().cloned();
                (tbl, target)
            }
            _ => unreachable!("validated above"),
        };
        let test_table = self.test_path.as_deref().map(read_csv).transpose()?;
        let target = self
            .target
            .clone()
            .or(default_target)
            .ok_or_else(|| Error::Config("dataset manifest has no `target` column".into()))?;
        let schema = Schema {
            task: self.task,
            target,
            features: self.features.clone(),
            drop: self.drop.clone(),
        };
        let split = if test_table.is_some() {
            SplitSpec::DedicatedTest { seed: self.split_seed }
        } else {
            SplitSpec::Standard { seed: self.split_seed }
        };
        build(&self.name, &table, test_table.as_ref(), &schema, split, self.holdout.as_ref())
    }
}
