//! Conjugate-prior algebra for the Categorical, Normal and Poisson targets.
//!
//! Every family is described by its prior parameters `(chi, n)`: `chi` is the
//! prior mean of the sufficient statistics and `n` the pseudo-count. The
//! functions here map them to the usual Dirichlet / Normal-Inverse-Gamma /
//! Gamma parameters and evaluate the closed-form expectations used in the
//! loss and in the uncertainty estimates.

pub mod batch;
pub use predictive::{posterior_predictive, Predictive};
pub mod predictive;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::special::{digamma_unchecked, lgamma_unchecked, ln_beta_multi};



const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Concentration at and above which entropies use the large-parameter
/// asymptotic form.
pub const APPROX_THRESHOLD: f64 = 1e4;

/// Smallest Dirichlet concentration fed to lgamma/digamma.
pub const ALPHA_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    Categorical { classes: usize },
    Normal,
    Poisson,
}

impl FamilyKind {
    /// Length of `chi`.
    pub fn stat_dim(&self) -> usize {
        match *self {
            FamilyKind::Categorical { classes } => classes,
            FamilyKind::Normal => 2,
            FamilyKind::Poisson => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FamilyKind::Categorical { classes } if classes < 2 => Err(Error::Config(format!(
                "categorical family needs at least 2 classes, got {classes}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Categorical { .. } => "categorical",
            FamilyKind::Normal => "normal",
            FamilyKind::Poisson => "poisson",
        }
    }

    /// Default prior: uniform classes with `n = C`, `N(0, 10²)`-like regression
    /// prior with `n = 1`, and a unit-rate Poisson prior with `n = 1`.
    pub fn default_prior(&self) -> ConjugateParams {
        match *self {
            FamilyKind::Categorical { classes } => ConjugateParams {
                chi: vec![1.0 / classes as f64; classes],
                n: classes as f64,
            },
            FamilyKind::Normal => ConjugateParams {
                chi: vec![0.0, 100.0],
                n: 1.0,
            },
            FamilyKind::Poisson => ConjugateParams {
                chi: vec![1.0],
                n: 1.0,
            },
        }
    }

    /// Checks that `y` lies in the support of the target distribution.
    pub fn validate_target(&self, y: f64) -> Result<()> {
        let ok = match *self {
            FamilyKind::Categorical { classes } => {
                y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes
            }
            FamilyKind::Normal => y.is_finite(),
            FamilyKind::Poisson => y >= 0.0 && y.is_finite() && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "target {y} outside the support of the {} family",
                self.name()
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateParams {
    pub chi: Vec<f64>,
    pub n: f64,
}

impl ConjugateParams {
    pub fn new(chi: Vec<f64>, n: f64) -> Self {
        ConjugateParams { chi, n }
    }

    pub fn validate(&self, kind: FamilyKind) -> Result<()> {
        let bad = |msg: String| Err(Error::Domain(msg));
        if self.chi.len() != kind.stat_dim() {
            return bad(format!(
                "chi has length {}, the {} family needs {}",
                self.chi.len(),
                kind.name(),
                kind.stat_dim()
            ));
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return bad(format!("evidence n must be positive and finite, got {}", self.n));
        }
        if self.chi.iter().any(|c| !c.is_finite()) {
            return bad("chi contains a non-finite entry".into());
        }
        match kind {
            FamilyKind::Categorical { .. } => {
                if self.chi.iter().any(|&c| c < 0.0) {
                    return bad("categorical chi has a negative entry".into());
                }
                let s: f64 = self.chi.iter().sum();
                if (s - 1.0).abs() > 1e-8 {
                    return bad(format!("categorical chi sums to {s}, not 1"));
                }
            }
            FamilyKind::Normal => {
                if self.chi[1] <= self.chi[0] * self.chi[0] {
                    return bad(format!(
                        "normal chi needs chi[1] > chi[0]^2 (positive variance), got {:?}",
                        self.chi
                    ));
                }
            }
            FamilyKind::Poisson => {
                if self.chi[0] <= 0.0 {
                    return bad(format!("poisson chi must be positive, got {}", self.chi[0]));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StandardParams {
    Dirichlet { alpha: Vec<f64> },
    Nig { mu0: f64, lambda: f64, alpha: f64, beta: f64 },
    Gamma { alpha: f64, beta: f64 },
}

impl StandardParams {
    /// The concentration compared against [`APPROX_THRESHOLD`].
    pub fn concentration(&self) -> f64 {
        match self {
            StandardParams::Dirichlet { alpha } => alpha.iter().sum(),
            StandardParams::Nig { alpha, .. } | StandardParams::Gamma { alpha, .. } => *alpha,
        }
    }
}

pub fn to_standard(p: &ConjugateParams, kind: FamilyKind) -> Result<StandardParams> {
    p.validate(kind)?;
    let n = p.n;
    Ok(match kind {
        FamilyKind::Categorical { .. } => StandardParams::Dirichlet {
            alpha: p.chi.iter().map(|c| n * c).collect(),
        },
        FamilyKind::Normal => StandardParams::Nig {
            mu0: p.chi[0],
            lambda: n,
            alpha: n / 2.0,
            beta: n * (p.chi[1] - p.chi[0] * p.chi[0]) / 2.0,
        },
        FamilyKind::Poisson => StandardParams::Gamma {
            alpha: n * p.chi[0],
            beta: n,
        },
    })
}

pub fn from_standard(s: &StandardParams) -> Result<(ConjugateParams, FamilyKind)> {
    let out = match s {
        StandardParams::Dirichlet { alpha } => {
            if alpha.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::Domain("dirichlet alpha must be positive".into()));
            }
            let a0: f64 = alpha.iter().sum();
            (
                ConjugateParams::new(alpha.iter().map(|a| a / a0).collect(), a0),
                FamilyKind::Categorical {
                    classes: alpha.len(),
                },
            )
        }
        &StandardParams::Nig {
            mu0,
            lambda,
            alpha,
            beta,
        } => {
            if !(lambda > 0.0 && alpha > 0.0 && beta > 0.0) {
                return Err(Error::Domain("NIG lambda, alpha, beta must be positive".into()));
            }
            if (lambda - 2.0 * alpha).abs() > 1e-10 * lambda {
                return Err(Error::Domain(format!(
                    "NIG with a single pseudo-count needs lambda = 2 alpha, got {lambda} and {alpha}"
                )));
            }
            (
                ConjugateParams::new(vec![mu0, mu0 * mu0 + 2.0 * beta / lambda], lambda),
                FamilyKind::Normal,
            )
        }
        &StandardParams::Gamma { alpha, beta } => {
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::Domain("gamma alpha and beta must be positive".into()));
            }
            (ConjugateParams::new(vec![alpha / beta], beta), FamilyKind::Poisson)
        }
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStat {
    pub u: Vec<f64>,
    pub log_h: f64,
}

pub fn sufficient_stat(y: f64, kind: FamilyKind) -> Result<SufficientStat> {
    kind.validate_target(y)?;
    Ok(match kind {
        FamilyKind::Categorical { classes } => {
            let mut u = vec![0.0; classes];
            u[y as usize] = 1.0;
            SufficientStat { u, log_h: 0.0 }
        }
        FamilyKind::Normal => SufficientStat {
            u: vec![y, y * y],
            log_h: -0.5 * LN_2PI,
        },
        FamilyKind::Poisson => SufficientStat {
            u: vec![y],
            log_h: -lgamma_unchecked(y + 1.0),
        },
    })
}

/// `E[log p(y | theta)]` under the conjugate distribution `post`.
pub fn expected_log_likelihood(y: f64, post: &ConjugateParams, kind: FamilyKind) -> Result<f64> {
    kind.validate_target(y)?;
    Ok(match to_standard(post, kind)? {
        StandardParams::Dirichlet { alpha } => {
            let alpha: Vec<f64> = alpha.iter().map(|a| a.max(ALPHA_FLOOR)).collect();
            let a0: f64 = alpha.iter().sum();
            digamma_unchecked(alpha[y as usize]) - digamma_unchecked(a0)
        }
        StandardParams::Nig {
            mu0,
            lambda,
            alpha,
            beta,
        } => {
            0.5 * (-(alpha / beta) * (y - mu0).powi(2) - 1.0 / lambda + digamma_unchecked(alpha)
                - beta.ln()
                - LN_2PI)
        }
        StandardParams::Gamma { alpha, beta } => {
            (digamma_unchecked(alpha) - beta.ln()) * y - alpha / beta - lgamma_unchecked(y + 1.0)
        }
    })
}

/// Entropy of the conjugate distribution, switching to the asymptotic form
/// once the concentration reaches [`APPROX_THRESHOLD`].
pub fn prior_entropy(post: &ConjugateParams, kind: FamilyKind) -> Result<f64> {
    let s = to_standard(post, kind)?;
    Ok(if s.concentration() >= APPROX_THRESHOLD {
        standard_entropy_approx(&s)
    } else {
        standard_entropy_exact(&s)
    })
}

pub fn prior_entropy_exact(post: &ConjugateParams, kind: FamilyKind) -> Result<f64> {
    Ok(standard_entropy_exact(&to_standard(post, kind)?))
}

pub fn prior_entropy_approx(post: &ConjugateParams, kind: FamilyKind) -> Result<f64> {
    Ok(standard_entropy_approx(&to_standard(post, kind)?))
}

pub fn standard_entropy_exact(s: &StandardParams) -> f64 {
    match s {
        StandardParams::Dirichlet { alpha } => {
            let alpha: Vec<f64> = alpha.iter().map(|a| a.max(ALPHA_FLOOR)).collect();
            let k = alpha.len() as f64;
            let a0: f64 = alpha.iter().sum();
            ln_beta_multi(&alpha) + (a0 - k) * digamma_unchecked(a0)
                - alpha
                    .iter()
                    .map(|&a| (a - 1.0) * digamma_unchecked(a))
                    .sum::<f64>()
        }
        &StandardParams::Nig {
            lambda,
            alpha,
            beta,
            ..
        } => {
            0.5 + 0.5 * LN_2PI + 1.5 * beta.ln() + lgamma_unchecked(alpha) - 0.5 * lambda.ln()
                + alpha
                - (alpha + 1.5) * digamma_unchecked(alpha)
        }
        &StandardParams::Gamma { alpha, beta } => {
            alpha + lgamma_unchecked(alpha) - beta.ln() + (1.0 - alpha) * digamma_unchecked(alpha)
        }
    }
}

pub fn standard_entropy_approx(s: &StandardParams) -> f64 {
    match s {
        StandardParams::Dirichlet { alpha } => {
            let alpha: Vec<f64> = alpha.iter().map(|a| a.max(ALPHA_FLOOR)).collect();
            let k = alpha.len() as f64;
            let a0: f64 = alpha.iter().sum();
            (k - 1.0) / 2.0 * (1.0 + LN_2PI) + 0.5 * alpha.iter().map(|a| a.ln()).sum::<f64>()
                - (k - 0.5) * a0.ln()
        }
        &StandardParams::Nig {
            lambda,
            alpha,
            beta,
            ..
        } => 1.0 + LN_2PI - 2.0 * alpha.ln() + 1.5 * beta.ln() - 0.5 * lambda.ln(),
        &StandardParams::Gamma { alpha, beta } => {
            0.5 + 0.5 * LN_2PI + 0.5 * alpha.ln() - beta.ln()
        }
    }
}

/// Parameters of the target distribution itself.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetParams {
    Categorical { p: Vec<f64> },
    Normal { mean: f64, var: f64 },
    Poisson { rate: f64 },
}

/// Point estimate of the target parameters under the conjugate distribution:
/// class probabilities `chi`, the Normal mean `mu0` with variance `beta/alpha`,
/// and the Poisson rate `alpha/beta = chi`.
pub fn mean_target_params(post: &ConjugateParams, kind: FamilyKind) -> Result<TargetParams> {
    post.validate(kind)?;
    Ok(match kind {
        FamilyKind::Categorical { .. } => TargetParams::Categorical { p: post.chi.clone() },
        FamilyKind::Normal => TargetParams::Normal {
            mean: post.chi[0],
            var: post.chi[1] - post.chi[0] * post.chi[0],
        },
        FamilyKind::Poisson => TargetParams::Poisson { rate: post.chi[0] },
    })
}

/// Entropy of the target distribution.
///
/// Categorical uses Shannon entropy `-Σ p log p`. The Normal value is
/// `½ log(2πσ²)`, which omits the constant `½` of the differential entropy;
/// it is only ever compared between inputs, so the offset is immaterial.
pub fn target_entropy(t: &TargetParams) -> Result<f64> {
    match t {
        TargetParams::Categorical { p } => {
            let s: f64 = p.iter().sum();
            if p.iter().any(|&v| v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::Domain(format!("probabilities {p:?} not on the simplex")));
            }
            Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
        }
        &TargetParams::Normal { var, .. } => {
            if !(var > 0.0 && var.is_finite()) {
                return Err(Error::Domain(format!("normal variance must be positive, got {var}")));
            }
            Ok(0.5 * (2.0 * PI * var).ln())
        }
        &TargetParams::Poisson { rate } => {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::Domain(format!("poisson rate must be positive, got {rate}")));
            }
            Ok(poisson_entropy(rate))
        }
    }
}

/// `λ(1 − log λ) + e^{−λ} Σ_k λ^k log(k!) / k!`; the series stops once past
/// the mode with a term below 1e-12, or at `k = 10λ + 100`.
pub fn poisson_entropy(rate: f64) -> f64 {
    let ln_rate = rate.ln();
    let k_max = (10.0 * rate + 100.0).floor() as u64;
    let mut series = 0.0;
    for k in 2..=k_max {
        let kf = k as f64;
        let lf = lgamma_unchecked(kf + 1.0);
        let term = (-rate + kf * ln_rate - lf).exp() * lf;
        series += term;
        if kf > rate && term < 1e-12 {
            break;
        }
    }
    rate * (1.0 - ln_rate) + series
}
