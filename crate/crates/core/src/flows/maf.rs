use rand::Rng;

use super::FlowInit;
use crate::error::Result;
use crate::nn::uniform_init;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Bound on the per-dimension log-scale.
pub const LOG_SCALE_CLAMP: f64 = 7.0;

/// Masks for a MADE network with inputs taken in `order` (`order[0]` is
/// the first variable). Returns one `fan_in × fan_out` mask per layer; the
/// last maps to `2H` outputs (shift and log-scale for each variable).
pub fn build_made_masks(dim: usize, hidden: &[usize], order: &[usize]) -> Vec<Tensor> {
    let mut deg_in = vec![0usize; dim];
    for (pos, &d) in order.iter().enumerate() {
        deg_in[d] = pos + 1;
    }
    let cycle = dim.saturating_sub(1).max(1);
    let mut prev = deg_in.clone();
    let mut masks = Vec::with_capacity(hidden.len() + 1);
    for &width in hidden {
        let deg: Vec<usize> = (0..width).map(|k| k % cycle + 1).collect();
        masks.push(Tensor::from_fn(prev.len(), width, |i, k| {
            f64::from(u8::from(deg[k] >= prev[i]))
        }));
        prev = deg;
    }
    masks.push(Tensor::from_fn(prev.len(), 2 * dim, |k, o| {
        f64::from(u8::from(deg_in[o % dim] > prev[k]))
    }));
    masks
}

/// One masked-autoregressive layer mapping data to base:
/// `u = (z − μ(z)) · exp(−s(z))` with `μ_d, s_d` depending on earlier
/// variables only.
#[derive(Clone, Debug)]
pub struct MafLayer {
    pub weights: Vec<(ParamId, ParamId)>,
    pub masks: Vec<Tensor>,
    pub order: Vec<usize>,
    pub dim: usize,
}

impl MafLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        reversed: bool,
        init: FlowInit,
    ) -> Self {
        let order: Vec<usize> = if reversed {
            (0..dim).rev().collect()
        } else {
            (0..dim).collect()
        };
        let hidden = [2 * dim, 2 * dim];
        let masks = build_made_masks(dim, &hidden, &order);
        let last = masks.len() - 1;
        let weights = masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (fi, fo) = (m.rows(), m.cols());
                let mut w = uniform_init(rng, fi, fo, fi);
                let mut b = uniform_init(rng, 1, fo, fi);
                if i == last {
                    let s = match init {
                        FlowInit::Random => 0.01,
                        FlowInit::Identity => 0.0,
                    };
                    w = w.map(|v| v * s);
                    b = b.map(|v| v * s);
                }
                (
                    store.add(format!("{name}.made{i}.w"), ParamGroup::Flow, w),
                    store.add(format!("{name}.made{i}.b"), ParamGroup::Flow, b),
                )
            })
            .collect();
        MafLayer {
            weights,
            masks,
            order,
            dim,
        }
    }

    /// Shift and clamped log-scale, each `B × H`.
    pub fn shift_log_scale<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let tape = z.tape();
        let mut x = z;
        let last = self.weights.len() - 1;
        for (i, (&(w, b), m)) in self.weights.iter().zip(&self.masks).enumerate() {
            let wm = p[w].mul(tape.constant(m.clone()))?;
            x = x.affine(wm, p[b])?;
            if i < last {
                x = x.tanh()?;
            }
        }
        let mu = x.slice_cols(0, self.dim)?;
        let s = x
            .slice_cols(self.dim, 2 * self.dim)?
            .clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)?;
        Ok((mu, s))
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (mu, s) = self.shift_log_scale(p, z)?;
        let u = z.sub(mu)?.mul(s.neg()?.exp()?)?;
        let logdet = s.sum_rows()?.neg()?;
        Ok((u, logdet))
    }
}
