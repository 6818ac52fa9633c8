//! Dense layers and the multilayer perceptron encoder.

use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Uniform in `[-1/√fan_in, 1/√fan_in]`, for weights and biases alike.
pub fn uniform_init(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            group,
            uniform_init(rng, fan_in, fan_out, fan_in),
        );
        let b = store.add(format!("{name}.b"), group, uniform_init(rng, 1, fan_out, fan_in));
        Linear {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.affine(p[self.w], p[self.b])
    }
}

/// Leaky-ReLU network; the last layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists every width from input to output, e.g. `[8, 16, 16, 4]`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        sizes: &[usize],
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), group, w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(p, x)?;
            if i < last {
                x = x.leaky_relu()?;
            }
        }
        Ok(x)
    }
}
