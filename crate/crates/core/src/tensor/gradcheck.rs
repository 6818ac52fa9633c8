//! Central finite-difference checking of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so that gradients that are
/// exactly or nearly zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct Report {
    pub max_rel_err: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences with step `h` for every element of every input.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Report>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.var(x.clone())).collect();
        f(&tape, &vars)?.item()
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let grads = f(&tape, &vars)?.backward()?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut report = Report {
        max_rel_err: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut xs = inputs.to_vec();
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - h;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g.data()[i];
            let e = rel_err(a, numeric);
            if e > report.max_rel_err || !e.is_finite() {
                report = Report {
                    max_rel_err: e,
                    input: k,
                    index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
