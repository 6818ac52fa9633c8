//! Normalized densities on the latent space.
//!
//! Both flow types map a latent point `z` towards a standard Normal base and
//! add the log-Jacobian of each layer, so `log_prob` is the exact
//! log-density of a normalized distribution.

mod fit;
pub mod maf;
pub mod radial;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub use fit::{fit_flow, mean_log_lik, FlowFitRecord, FlowTrainer};
pub use maf::{build_made_masks, MafLayer};
pub use radial::RadialLayer;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Radial,
    Maf,
}

/// Flow type and depth, written `radial-8` or `maf-4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FlowSpec {
    pub kind: FlowKind,
    pub layers: usize,
}

impl fmt::Display for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            FlowKind::Radial => "radial",
            FlowKind::Maf => "maf",
        };
        write!(f, "{k}-{}", self.layers)
    }
}

impl FromStr for FlowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("flow `{s}` is not of the form radial-<n> or maf-<n>"));
        let (k, n) = s.split_once('-').ok_or_else(bad)?;
        let kind = match k {
            "radial" => FlowKind::Radial,
            "maf" => FlowKind::Maf,
            _ => return Err(bad()),
        };
        let layers: usize = n.parse().map_err(|_| bad())?;
        if layers == 0 {
            return Err(bad());
        }
        Ok(FlowSpec { kind, layers })
    }
}

impl TryFrom<String> for FlowSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FlowSpec> for String {
    fn from(s: FlowSpec) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowInit {
    /// Small random parameters.
    Random,
    /// Every layer starts as the identity map.
    Identity,
}

#[derive(Clone, Debug)]
enum Layers {
    Radial(Vec<RadialLayer>),
    Maf(Vec<MafLayer>),
}

#[derive(Clone, Debug)]
pub struct FlowDensity {
    pub dim: usize,
    pub spec: FlowSpec,
    layers: Layers,
}

/// `log N(u | 0, I)` per row.
pub fn base_log_prob<'t>(u: Var<'t>) -> Result<Var<'t>> {
    let h = u.shape()[1] as f64;
    u.square()?.sum_rows()?.scale(-0.5)?.shift(-0.5 * h * LN_2PI)
}

impl FlowDensity {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        dim: usize,
        spec: FlowSpec,
        init: FlowInit,
    ) -> Self {
        let layers = match spec.kind {
            FlowKind::Radial => Layers::Radial(
                (0..spec.layers)
                    .map(|i| RadialLayer::new(store, rng, &format!("flow.{i}"), dim, init))
                    .collect(),
            ),
            FlowKind::Maf => Layers::Maf(
                (0..spec.layers)
                    .map(|i| MafLayer::new(store, rng, &format!("flow.{i}"), dim, i % 2 == 1, init))
                    .collect(),
            ),
        };
        FlowDensity { dim, spec, layers }
    }

    pub fn radial_layers(&self) -> &[RadialLayer] {
        match &self.layers {
            Layers::Radial(l) => l,
            Layers::Maf(_) => &[],
        }
    }

    pub fn maf_layers(&self) -> &[MafLayer] {
        match &self.layers {
            Layers::Maf(l) => l,
            Layers::Radial(_) => &[],
        }
    }

    /// Maps `z` (`B × H`) to the base space, returning the image and the
    /// summed log-Jacobian (`B × 1`).
    pub fn to_base<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let [_, h] = z.shape();
        if h != self.dim {
            return Err(Error::Dimension {
                op: "flow",
                lhs: z.shape().to_vec(),
                rhs: vec![self.dim],
            });
        }
        let mut x = z;
        let mut logdet: Option<Var<'t>> = None;
        let mut add = |ld: Var<'t>| -> Result<()> {
            logdet = Some(match logdet {
                Some(acc) => acc.add(ld)?,
                None => ld,
            });
            Ok(())
        };
        match &self.layers {
            Layers::Radial(ls) => {
                for l in ls {
                    let (y, ld) = l.forward(p, x)?;
                    add(ld)?;
                    x = y;
                }
            }
            Layers::Maf(ls) => {
                for l in ls {
                    let (y, ld) = l.forward(p, x)?;
                    add(ld)?;
                    x = y;
                }
            }
        }
        Ok((x, logdet))
    }

    /// `log p(z)` per row (`B × 1`).
    pub fn log_prob<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        if !z.value().is_finite() {
            return Err(Error::Domain("flow log_prob of a non-finite latent".into()));
        }
        let (u, logdet) = self.to_base(p, z)?;
        let base = base_log_prob(u)?;
        match logdet {
            Some(ld) => base.add(ld),
            None => Ok(base),
        }
    }

    /// Evaluates `log p` for each row of `z` without recording gradients.
    pub fn log_prob_values(&self, store: &ParamStore, z: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let lp = self.log_prob(&p, tape.constant(z.clone()))?;
        let v = lp.value();
        Ok(v.data().to_vec())
    }
}

/// Importance-sampling estimate of `∫ p(z) dz` under the proposal
/// `N(center, scale² I)`, with its standard error.
///
/// Samples are drawn in fixed-size chunks, each from its own generator seeded
/// by `(seed, chunk index)`, so the estimate does not depend on `exec`.
pub fn mc_normalization(
    flow: &FlowDensity,
    store: &ParamStore,
    samples: usize,
    center: &[f64],
    scale: f64,
    seed: u64,
    exec: Exec,
) -> Result<(f64, f64)> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const CHUNK: usize = 4096;
    let h = flow.dim;
    let log_q_const = -(h as f64) * (scale.ln() + 0.5 * LN_2PI);
    let parts = exec.map_chunks(samples, CHUNK, |start, end| -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start as u64 / CHUNK as u64);
        let mut z = Tensor::zeros(end - start, h);
        let mut log_q = vec![log_q_const; end - start];
        for i in 0..end - start {
            for d in 0..h {
                let e: f64 = StandardNormal.sample(&mut rng);
                z.set(i, d, center[d] + scale * e);
                log_q[i] -= 0.5 * e * e;
            }
        }
        let lp = flow.log_prob_values(store, &z)?;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (a, b) in lp.iter().zip(&log_q) {
            let w = (a - b).exp();
            s += w;
            s2 += w * w;
        }
        Ok((s, s2))
    });
    let (mut s, mut s2) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        s += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn spec_round_trip() {
        for s in ["radial-8", "radial-16", "maf-4", "maf-16"] {
            assert_eq!(s.parse::<FlowSpec>().unwrap().to_string(), s);
        }
        for s in ["planar-4", "maf", "maf-0", "radial-x"] {
            assert!(s.parse::<FlowSpec>().is_err());
        }
    }

    #[test]
    fn identity_flow_is_base_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for spec in ["radial-8", "maf-4"] {
            let mut store = ParamStore::new();
            let spec: FlowSpec = spec.parse().unwrap();
            let flow = FlowDensity::new(&mut store, &mut rng, 2, spec, FlowInit::Identity);
            let lp = flow.log_prob_values(&store, &Tensor::zeros(1, 2)).unwrap();
            assert!((lp[0] + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12, "{spec}");
        }
    }

    #[test]
    fn random_radial_stack_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (dim, spec) in [(1, "radial-8"), (2, "radial-8"), (2, "maf-4"), (3, "maf-4")] {
            let mut store = ParamStore::new();
            let flow = FlowDensity::new(&mut store, &mut rng, dim, spec.parse().unwrap(), FlowInit::Random);
            let center = vec![0.0; dim];
            let (m, se) = mc_normalization(&flow, &store, 100_000, &center, 1.5, 1, Exec::Parallel).unwrap();
            assert!((m - 1.0).abs() < 0.01, "{spec} H={dim}: {m} ± {se}");
        }
    }

    #[test]
    fn normalization_estimate_is_exec_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let flow = FlowDensity::new(&mut store, &mut rng, 2, "radial-4".parse().unwrap(), FlowInit::Random);
        let a = mc_normalization(&flow, &store, 20_000, &[0.0, 0.0], 1.5, 7, Exec::Parallel).unwrap();
        let b = mc_normalization(&flow, &store, 20_000, &[0.0, 0.0], 1.5, 7, Exec::Sequential).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
    }

    #[test]
    fn radial_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let flow = FlowDensity::new(&mut store, &mut rng, 3, "radial-8".parse().unwrap(), FlowInit::Random);
        for (k, layer) in flow.radial_layers().iter().enumerate() {
            let beta = [-0.99, -0.5, 0.0, 2.0][k % 4];
            layer.set_alpha_beta(&mut store, 0.3 + 0.2 * k as f64, beta * (0.3 + 0.2 * k as f64));
        }
        for _ in 0..50 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            for layer in flow.radial_layers() {
                let tape = Tape::new();
                let p = store.bind_frozen(&tape);
                let (w, _) = layer.forward(&p, tape.constant(Tensor::row(z.clone()))).unwrap();
                let back = layer.inverse(&store, w.value().data());
                for (a, b) in back.iter().zip(&z) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_beta_radial_is_base_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let flow = FlowDensity::new(&mut store, &mut rng, 2, "radial-1".parse().unwrap(), FlowInit::Random);
        flow.radial_layers()[0].set_alpha_beta(&mut store, 0.7, 0.0);
        let z = Tensor::from_rows(&[vec![0.3, -1.2], vec![4.0, 2.0]]).unwrap();
        let lp = flow.log_prob_values(&store, &z).unwrap();
        for (i, v) in lp.iter().enumerate() {
            let r2: f64 = z.row_slice(i).iter().map(|x| x * x).sum();
            assert!((v - (-0.5 * r2 - LN_2PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_dimension_and_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let flow = FlowDensity::new(&mut store, &mut rng, 3, "radial-2".parse().unwrap(), FlowInit::Random);
        assert!(flow.log_prob_values(&store, &Tensor::zeros(1, 2)).is_err());
        let bad = Tensor::row(vec![0.0, f64::NAN, 0.0]);
        assert!(matches!(flow.log_prob_values(&store, &bad), Err(Error::Domain(_))));
    }
}
