use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::tensor::{Gradients, Tensor};

/// Adam with bias correction and no learning-rate schedule.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to the parameters in `groups`. `grads[i]` is the
    /// gradient of parameter `i` (`None` means zero). Nothing is modified if
    /// any gradient is non-finite.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        groups: &[ParamGroup],
    ) -> Result<()> {
        for (p, g) in store.params().iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(Error::Dimension {
                        op: "adam",
                        lhs: p.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                if groups.contains(&p.group) && !g.is_finite() {
                    return Err(Error::NonFiniteGradient {
                        param: p.name.clone(),
                    });
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !groups.contains(&p.group) {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = p.value.data_mut();
            for k in 0..w.len() {
                let g = grads[i].as_ref().map_or(0.0, |g| g.data()[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Collects the gradient of every bound parameter, in store order.
pub fn collect_grads(bound: &Bound<'_>, grads: &Gradients) -> Vec<Option<Tensor>> {
    bound.vars().iter().map(|&v| grads.get_ref(v).cloned()).collect()
}
