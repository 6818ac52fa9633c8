//! The Natural Posterior Network.

mod budget;
pub mod checkpoint;
mod ensemble;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expfam::batch::PosteriorVars;
use crate::expfam::{
    mean_target_params, posterior_predictive, prior_entropy, target_entropy, ConjugateParams,
    FamilyKind, Predictive,
};
use crate::flows::{FlowDensity, FlowInit, FlowSpec};
use crate::nn::{Linear, Mlp};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::tensor::special::softplus_inv;
use crate::tensor::{Tape, Tensor, Var};

pub use budget::{certainty_budget, BudgetMode};
pub use ensemble::{combine, ensemble_combine, Ensemble, EnsembleMember};

/// Upper bound on the per-input evidence.
pub const MAX_EVIDENCE: f64 = 1e12;
/// Added to the Poisson rate link.
pub const RATE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NatPnConfig {
    pub family: FamilyKind,
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Hidden widths of the encoder; a final linear layer maps to the latent.
    pub encoder_hidden: Vec<usize>,
    pub flow: FlowSpec,
    /// Defaults to the family's standard prior.
    #[serde(default)]
    pub prior: Option<ConjugateParams>,
    #[serde(default)]
    pub entropy_weight: f64,
    #[serde(default)]
    pub budget: BudgetMode,
    /// Needed by the data-count budget.
    #[serde(default)]
    pub train_size: Option<usize>,
    /// Initial value of the decoder output for the rate (Poisson) or
    /// variance (Normal) link, e.g. the mean training count.
    #[serde(default)]
    pub decoder_init: Option<f64>,
}

impl NatPnConfig {
    pub fn new(family: FamilyKind, input_dim: usize, latent_dim: usize, flow: FlowSpec) -> Self {
        NatPnConfig {
            family,
            input_dim,
            latent_dim,
            encoder_hidden: vec![16, 16],
            flow,
            prior: None,
            entropy_weight: 0.0,
            budget: BudgetMode::Dimension,
            train_size: None,
            decoder_init: None,
        }
    }

    pub fn prior(&self) -> ConjugateParams {
        self.prior.clone().unwrap_or_else(|| self.family.default_prior())
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        self.prior().validate(self.family)?;
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("input and latent dimensions must be positive".into()));
        }
        if self.encoder_hidden.contains(&0) {
            return Err(Error::Config("encoder layers must be non-empty".into()));
        }
        if !(0.0..=1e-5).contains(&self.entropy_weight) {
            return Err(Error::Config(format!(
                "entropy weight {} outside [0, 1e-5]",
                self.entropy_weight
            )));
        }
        certainty_budget(self.latent_dim, self.budget, self.train_size)?;
        Ok(())
    }
}

/// Per-input result of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorPrediction {
    pub chi_post: Vec<f64>,
    pub n_post: f64,
    pub chi_update: Vec<f64>,
    pub n_update: f64,
    pub latent_logprob: f64,
}

impl PosteriorPrediction {
    pub fn posterior(&self) -> ConjugateParams {
        ConjugateParams::new(self.chi_post.clone(), self.n_post)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uncertainties {
    pub aleatoric: f64,
    pub epistemic: f64,
    pub predictive: f64,
}

/// Aleatoric: entropy of the target distribution at the posterior mean.
/// Epistemic: posterior evidence. Predictive: entropy of the posterior.
pub fn uncertainties(pred: &PosteriorPrediction, family: FamilyKind) -> Result<Uncertainties> {
    let post = pred.posterior();
    Ok(Uncertainties {
        aleatoric: target_entropy(&mean_target_params(&post, family)?)?,
        epistemic: pred.n_post,
        predictive: prior_entropy(&post, family)?,
    })
}

/// Tape outputs of a batch forward pass.
pub struct BatchForward<'t> {
    pub latent: Var<'t>,
    pub latent_logprob: Var<'t>,
    /// `log n⁽ⁱ⁾` after clamping, `B × 1`.
    pub log_evidence: Var<'t>,
    /// `χ⁽ⁱ⁾`, `B × L`.
    pub chi_update: Var<'t>,
    pub posterior: PosteriorVars<'t>,
    /// Rows whose evidence hit [`MAX_EVIDENCE`].
    pub clamped: usize,
}

#[derive(Clone, Debug)]
pub struct NatPn {
    pub config: NatPnConfig,
    pub store: ParamStore,
    encoder: Mlp,
    decoder: Linear,
    flow: FlowDensity,
    log_budget: f64,
    prior: ConjugateParams,
}

fn stage(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Numeric { stage } => Error::Numeric {
            stage: format!("{name}/{stage}"),
        },
        other => other,
    }
}

impl NatPn {
    pub fn new(config: NatPnConfig, seed: u64) -> Result<Self> {
        Self::with_flow_init(config, seed, FlowInit::Random)
    }

    pub fn with_flow_init(config: NatPnConfig, seed: u64, init: FlowInit) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut sizes = vec![config.input_dim];
        sizes.extend(&config.encoder_hidden);
        sizes.push(config.latent_dim);
        let encoder = Mlp::new(&mut store, &mut rng, "encoder", ParamGroup::Encoder, &sizes);
        let out = match config.family {
            FamilyKind::Categorical { classes } => classes,
            FamilyKind::Normal => 2,
            FamilyKind::Poisson => 1,
        };
        let decoder = Linear::new(
            &mut store,
            &mut rng,
            "decoder",
            ParamGroup::Decoder,
            config.latent_dim,
            out,
        );
        let link_init = match config.family {
            FamilyKind::Categorical { .. } => None,
            FamilyKind::Normal => Some((1, softplus_inv(config.decoder_init.unwrap_or(1.0)))),
            FamilyKind::Poisson => Some((
                0,
                softplus_inv((config.decoder_init.unwrap_or(1.0) - RATE_FLOOR).max(1e-3)),
            )),
        };
        if let Some((col, v)) = link_init {
            store.get_mut(decoder.b).set(0, col, v);
        }
        let flow = FlowDensity::new(&mut store, &mut rng, config.latent_dim, config.flow, init);
        let log_budget = certainty_budget(config.latent_dim, config.budget, config.train_size)?;
        let prior = config.prior();
        Ok(NatPn {
            config,
            store,
            encoder,
            decoder,
            flow,
            log_budget,
            prior,
        })
    }

    pub fn family(&self) -> FamilyKind {
        self.config.family
    }

    pub fn prior(&self) -> &ConjugateParams {
        &self.prior
    }

    pub fn log_budget(&self) -> f64 {
        self.log_budget
    }

    /// The flow together with mutable parameters, for flow-only training.
    pub fn flow_with_store(&mut self) -> (&FlowDensity, &mut ParamStore) {
        (&self.flow, &mut self.store)
    }

    pub fn flow(&self) -> &FlowDensity {
        &self.flow
    }

    pub fn encode<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if x.shape()[1] != self.config.input_dim {
            return Err(Error::Dimension {
                op: "encoder",
                lhs: x.shape().to_vec(),
                rhs: vec![self.config.input_dim],
            });
        }
        self.encoder.forward(p, x).map_err(stage("encoder"))
    }

    /// Latent codes of `x` without gradients.
    pub fn latents(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let z = self.encode(&p, tape.constant(x.clone()))?;
        let v = z.value();
        Ok((*v).clone())
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<BatchForward<'t>> {
        let tape = x.tape();
        let z = self.encode(p, x)?;
        let logp = self.flow.log_prob(p, z).map_err(stage("flow"))?;
        self.forward_from_latent(p, z, logp, tape)
    }

    fn forward_from_latent<'t>(
        &self,
        p: &Bound<'t>,
        z: Var<'t>,
        logp: Var<'t>,
        tape: &'t Tape,
    ) -> Result<BatchForward<'t>> {
        let raw_log_n = logp.shift(self.log_budget)?;
        let cap = MAX_EVIDENCE.ln();
        let clamped = raw_log_n.value().data().iter().filter(|&&v| v > cap).count();
        let log_n = raw_log_n.clamp(f64::NEG_INFINITY, cap)?;
        let n = log_n.exp().map_err(stage("evidence"))?;
        let out = self.decoder.forward(p, z).map_err(stage("decoder"))?;
        let np = self.prior.n;
        let n_post = n.shift(np)?;
        let post = || -> Result<(Var<'t>, PosteriorVars<'t>)> {
            Ok(match self.config.family {
                FamilyKind::Categorical { .. } => {
                    let chi = out.softmax()?;
                    let prior_mass = tape.constant(Tensor::row(
                        self.prior.chi.iter().map(|c| np * c).collect(),
                    ));
                    let alpha = chi.mul(n)?.add(prior_mass)?;
                    (chi, PosteriorVars::Categorical { alpha })
                }
                FamilyKind::Normal => {
                    let mu = out.slice_cols(0, 1)?;
                    let v = out.slice_cols(1, 2)?.softplus()?;
                    let chi = Var::concat(&[mu, mu.square()?.add(v)?])?;
                    let (mu_p, v_p) = (
                        self.prior.chi[0],
                        self.prior.chi[1] - self.prior.chi[0] * self.prior.chi[0],
                    );
                    let w = n.div(n_post)?;
                    let wp = tape.scalar(np).div(n_post)?;
                    let dmu = mu.shift(-mu_p)?;
                    let mu_post = w.mul(dmu)?.shift(mu_p)?;
                    let var_post = w
                        .mul(v)?
                        .add(wp.scale(v_p)?)?
                        .add(w.mul(wp)?.mul(dmu.square()?)?)?;
                    (
                        chi,
                        PosteriorVars::Normal {
                            mu: mu_post,
                            var: var_post,
                            n: n_post,
                        },
                    )
                }
                FamilyKind::Poisson => {
                    let rate = out.softplus()?.shift(RATE_FLOOR)?;
                    let rate_post = rate
                        .mul(n)?
                        .shift(np * self.prior.chi[0])?
                        .div(n_post)?;
                    (
                        rate,
                        PosteriorVars::Poisson {
                            rate: rate_post,
                            n: n_post,
                        },
                    )
                }
            })
        };
        let (chi_update, posterior) = post().map_err(stage("posterior"))?;
        Ok(BatchForward {
            latent: z,
            latent_logprob: logp,
            log_evidence: log_n,
            chi_update,
            posterior,
            clamped,
        })
    }

    /// Mean Bayesian loss `−E[log p(y|θ)] − λ H[posterior]` over the batch.
    pub fn loss<'t>(&self, fwd: &BatchForward<'t>, y: &Tensor) -> Result<Var<'t>> {
        bayesian_loss(&fwd.posterior, y, self.config.entropy_weight)
    }

    /// Per-input posteriors for `x` (`B × D`), evaluated without gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<PosteriorPrediction>> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let fwd = self.forward(&p, tape.constant(x.clone()))?;
        self.collect(&fwd)
    }

    /// As [`predict`](Self::predict), splitting `x` into row chunks that run
    /// under `exec`.
    pub fn predict_batched(&self, x: &Tensor, chunk: usize, exec: Exec) -> Result<Vec<PosteriorPrediction>> {
        let parts = exec.map_chunks(x.rows(), chunk, |a, b| {
            let idx: Vec<usize> = (a..b).collect();
            self.predict(&x.select_rows(&idx))
        });
        let mut out = Vec::with_capacity(x.rows());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Posteriors computed from a forced latent log-density, bypassing the flow.
    pub fn predict_with_logprob(&self, x: &Tensor, logprob: &[f64]) -> Result<Vec<PosteriorPrediction>> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let z = self.encode(&p, tape.constant(x.clone()))?;
        let lp = tape.constant(Tensor::column(logprob.to_vec()));
        let fwd = self.forward_from_latent(&p, z, lp, &tape)?;
        self.collect(&fwd)
    }

    fn collect(&self, fwd: &BatchForward<'_>) -> Result<Vec<PosteriorPrediction>> {
        let chi = fwd.chi_update.value();
        let log_n = fwd.log_evidence.value();
        let logp = fwd.latent_logprob.value();
        (0..chi.rows())
            .map(|i| {
                let n = log_n.data()[i].exp();
                let chi_u = chi.row_slice(i).to_vec();
                let (chi_post, n_post) =
                    combine(&self.prior, &[(chi_u.as_slice(), n)], self.config.family)?;
                Ok(PosteriorPrediction {
                    chi_post,
                    n_post,
                    chi_update: chi_u,
                    n_update: n,
                    latent_logprob: logp.data()[i],
                })
            })
            .collect()
    }

    pub fn predictive(&self, pred: &PosteriorPrediction) -> Result<Predictive> {
        posterior_predictive(&pred.posterior(), self.config.family)
    }
}

/// Anything producing per-input posteriors: a single model or an ensemble.
pub trait Predictor: Sync {
    fn family(&self) -> FamilyKind;
    fn prior(&self) -> &ConjugateParams;
    fn predict_all(&self, x: &Tensor, exec: Exec) -> Result<Vec<PosteriorPrediction>>;

    fn predictive(&self, pred: &PosteriorPrediction) -> Result<Predictive> {
        posterior_predictive(&pred.posterior(), self.family())
    }
}

/// Rows per forward pass when predicting large inputs.
pub const PREDICT_CHUNK: usize = 256;

impl Predictor for NatPn {
    fn family(&self) -> FamilyKind {
        self.config.family
    }

    fn prior(&self) -> &ConjugateParams {
        &self.prior
    }

    fn predict_all(&self, x: &Tensor, exec: Exec) -> Result<Vec<PosteriorPrediction>> {
        self.predict_batched(x, PREDICT_CHUNK, exec)
    }
}

/// `mean(−E[log p(y|θ)] − λ H[posterior])`.
pub fn bayesian_loss<'t>(post: &PosteriorVars<'t>, y: &Tensor, entropy_weight: f64) -> Result<Var<'t>> {
    let nll = post.expected_log_likelihood(y)?.neg()?;
    let per_row = if entropy_weight == 0.0 {
        nll
    } else {
        nll.sub(post.prior_entropy()?.scale(entropy_weight)?)?
    };
    per_row.mean()
}
