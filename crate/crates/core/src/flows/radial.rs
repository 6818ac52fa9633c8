use rand::Rng;

use super::FlowInit;
use crate::error::Result;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::special::{softplus, softplus_inv};
use crate::tensor::{Tensor, Var};

/// `g(z) = z + β h(r) (z − z0)` with `h(r) = 1/(α + r)`, `r = ‖z − z0‖`.
///
/// `α = softplus(alpha_raw)` and `β = −α + softplus(beta_raw)`, which keeps
/// `β > −α` so that `g` stays invertible during training.
#[derive(Clone, Debug)]
pub struct RadialLayer {
    pub z0: ParamId,
    pub alpha_raw: ParamId,
    pub beta_raw: ParamId,
    pub dim: usize,
}

impl RadialLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        init: FlowInit,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut u = || rng.random_range(-bound..bound);
        let z0 = Tensor::from_fn(1, dim, |_, _| u());
        let a = u();
        let b = match init {
            FlowInit::Random => u(),
            FlowInit::Identity => a,
        };
        RadialLayer {
            z0: store.add(format!("{name}.z0"), ParamGroup::Flow, z0),
            alpha_raw: store.add(format!("{name}.alpha"), ParamGroup::Flow, Tensor::scalar(a)),
            beta_raw: store.add(format!("{name}.beta"), ParamGroup::Flow, Tensor::scalar(b)),
            dim,
        }
    }

    /// Sets `α` and `β` directly (`β > −α`).
    pub fn set_alpha_beta(&self, store: &mut ParamStore, alpha: f64, beta: f64) {
        *store.get_mut(self.alpha_raw) = Tensor::scalar(softplus_inv(alpha));
        *store.get_mut(self.beta_raw) = Tensor::scalar(softplus_inv(beta + alpha));
    }

    pub fn alpha_beta(&self, store: &ParamStore) -> (f64, f64) {
        let a = softplus(store.get(self.alpha_raw).data()[0]);
        let b = -a + softplus(store.get(self.beta_raw).data()[0]);
        (a, b)
    }

    /// Returns `g(z)` and `log |det ∂g/∂z|` per row.
    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h_dim = self.dim as f64;
        let alpha = p[self.alpha_raw].softplus()?;
        let beta = p[self.beta_raw].softplus()?.sub(alpha)?;
        let d = z.sub(p[self.z0])?;
        let r = d.square()?.sum_rows()?.sqrt()?;
        let a_r = r.add(alpha)?;
        let bh = beta.div(a_r)?;
        let out = z.add(d.mul(bh)?)?;
        // (H−1) log(1 + βh) + log(1 + βα/(α+r)²)
        let l1 = bh.shift(1.0)?.ln()?.scale(h_dim - 1.0)?;
        let l2 = beta.mul(alpha)?.div(a_r.square()?)?.shift(1.0)?.ln()?;
        Ok((out, l1.add(l2)?))
    }

    /// Inverts `g` at `w` by bisection on `r`.
    pub fn inverse(&self, store: &ParamStore, w: &[f64]) -> Vec<f64> {
        let (a, b) = self.alpha_beta(store);
        let z0 = store.get(self.z0).data();
        let dw: Vec<f64> = w.iter().zip(z0).map(|(x, c)| x - c).collect();
        let target = dw.iter().map(|x| x * x).sum::<f64>().sqrt();
        // ‖g(z) − z0‖ = r (1 + β/(α + r)) is increasing in r when β > −α
        let f = |r: f64| r * (1.0 + b / (a + r));
        let (mut lo, mut hi) = (0.0, target + b.abs() + 1.0);
        while f(hi) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = 0.5 * (lo + hi);
        let s = 1.0 + b / (a + r);
        dw.iter().zip(z0).map(|(x, c)| c + x / s).collect()
    }
}
