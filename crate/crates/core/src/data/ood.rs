use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, OodSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scale applied to standardized inputs to imitate data that was never
/// normalized (pixel values in 0..255 rather than 0..1).
pub const DEFAULT_OODOM_FACTOR: f64 = 255.0;

fn default_factor() -> f64 {
    DEFAULT_OODOM_FACTOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSpec {
    /// The classes removed by the dataset's category holdout.
    LeftOutCategory,
    /// The attribute values removed by the dataset's attribute holdout.
    LeftOutAttributeValue,
    /// Test inputs multiplied by a large factor.
    OodomScale {
        #[serde(default = "default_factor")]
        factor: f64,
    },
    /// Isotropic Gaussian inputs in standardized feature space.
    GaussianNoise {
        sigma: f64,
        /// Number of rows; the test-set size when absent.
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

pub fn oodom_scale(x: &Tensor, factor: f64) -> Tensor {
    x.map(|v| v * factor)
}

pub fn gaussian_noise(n: usize, dim: usize, sigma: f64, seed: u64) -> Result<Tensor> {
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::Config(format!("gaussian noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(n, dim, (0..n * dim).map(|_| normal.sample(&mut rng)).collect())
}

/// Builds the OOD set(s) described by `spec` for a dataset.
pub fn make_ood(ds: &Dataset, spec: &OodSpec) -> Result<Vec<OodSet>> {
    match spec {
        OodSpec::LeftOutCategory | OodSpec::LeftOutAttributeValue => {
            if ds.held_out.is_empty() {
                return Err(Error::Config(format!(
                    "dataset `{}` has no holdout to provide left-out OOD sets",
                    ds.name
                )));
            }
            Ok(ds.held_out.clone())
        }
        OodSpec::OodomScale { factor } => {
            if !(factor.is_finite() && *factor > 0.0) {
                return Err(Error::Config(format!("oodom factor must be positive, got {factor}")));
            }
            Ok(vec![OodSet {
                name: "oodom".into(),
                x: oodom_scale(&ds.test.x, *factor),
            }])
        }
        OodSpec::GaussianNoise { sigma, n, seed } => Ok(vec![OodSet {
            name: format!("noise_sigma={sigma}"),
            x: gaussian_noise(n.unwrap_or(ds.test.len()), ds.input_dim(), *sigma, *seed)?,
        }]),
    }
}
