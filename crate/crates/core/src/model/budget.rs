use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the total evidence mass is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// `N = 1`.
    Unit,
    /// `N` = number of training samples.
    DataCount,
    /// `log N = ½ (H log 2π + log(H + 1))`.
    #[default]
    Dimension,
}

impl BudgetMode {
    pub fn name(self) -> &'static str {
        match self {
            BudgetMode::Unit => "unit",
            BudgetMode::DataCount => "data_count",
            BudgetMode::Dimension => "dimension",
        }
    }
}

/// Log of the certainty budget.
pub fn certainty_budget(latent_dim: usize, mode: BudgetMode, train_size: Option<usize>) -> Result<f64> {
    if latent_dim == 0 {
        return Err(Error::Config("latent dimension must be at least 1".into()));
    }
    Ok(match mode {
        BudgetMode::Unit => 0.0,
        BudgetMode::DataCount => match train_size {
            Some(n) if n > 0 => (n as f64).ln(),
            _ => {
                return Err(Error::Config(
                    "data-count budget needs the training-set size".into(),
                ))
            }
        },
        BudgetMode::Dimension => {
            let h = latent_dim as f64;
            0.5 * (h * LN_2PI + (h + 1.0).ln())
        }
    })
}
