//! Differentiable, batched versions of the closed-form loss terms.
//!
//! Each function returns one value per row (`B × 1`). Rows whose
//! concentration reaches [`APPROX_THRESHOLD`] use the asymptotic entropy.

use super::{FamilyKind, ALPHA_FLOOR, APPROX_THRESHOLD, LN_2PI};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Posterior parameters of a batch as tape nodes.
#[derive(Clone, Copy, Debug)]
pub enum PosteriorVars<'t> {
    /// Dirichlet concentrations `n_post · chi_post`, `B × C`.
    Categorical { alpha: Var<'t> },
    /// Mean `mu0`, implied variance `chi[1] − chi[0]²`, and evidence, each `B × 1`.
    Normal { mu: Var<'t>, var: Var<'t>, n: Var<'t> },
    /// Rate `chi` and evidence, each `B × 1`.
    Poisson { rate: Var<'t>, n: Var<'t> },
}

fn one_hot(y: &Tensor, classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(y.rows(), classes);
    for (i, &v) in y.data().iter().enumerate() {
        FamilyKind::Categorical { classes }.validate_target(v)?;
        t.set(i, v as usize, 1.0);
    }
    Ok(t)
}

fn check_targets(y: &Tensor, rows: usize, kind: FamilyKind) -> Result<()> {
    if y.cols() != 1 || y.rows() != rows {
        return Err(Error::Dimension {
            op: "targets",
            lhs: y.shape().to_vec(),
            rhs: vec![rows, 1],
        });
    }
    for &v in y.data() {
        kind.validate_target(v)?;
    }
    Ok(())
}

/// Row mask of `concentration ≥ APPROX_THRESHOLD`.
fn approx_mask(conc: &Tensor) -> Vec<bool> {
    conc.data().iter().map(|&c| c >= APPROX_THRESHOLD).collect()
}

impl<'t> PosteriorVars<'t> {
    pub fn rows(&self) -> usize {
        match self {
            PosteriorVars::Categorical { alpha } => alpha.shape()[0],
            PosteriorVars::Normal { mu, .. } => mu.shape()[0],
            PosteriorVars::Poisson { rate, .. } => rate.shape()[0],
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            PosteriorVars::Categorical { alpha } => FamilyKind::Categorical {
                classes: alpha.shape()[1],
            },
            PosteriorVars::Normal { .. } => FamilyKind::Normal,
            PosteriorVars::Poisson { .. } => FamilyKind::Poisson,
        }
    }

    /// `E[log p(y | theta)]` per row; `y` is `B × 1`.
    pub fn expected_log_likelihood(&self, y: &Tensor) -> Result<Var<'t>> {
        check_targets(y, self.rows(), self.kind())?;
        match *self {
            PosteriorVars::Categorical { alpha } => {
                let tape = alpha.tape();
                let alpha = alpha.clamp(ALPHA_FLOOR, f64::INFINITY)?;
                let hot = tape.constant(one_hot(y, alpha.shape()[1])?);
                let a_y = alpha.mul(hot)?.sum_rows()?;
                let a0 = alpha.sum_rows()?;
                a_y.digamma()?.sub(a0.digamma()?)
            }
            PosteriorVars::Normal { mu, var, n } => {
                let tape = mu.tape();
                let yv = tape.constant(y.clone());
                let half_n = n.scale(0.5)?;
                let sq = yv.sub(mu)?.square()?.div(var)?;
                let inv_n = tape.scalar(1.0).div(n)?;
                let ln_beta = half_n.mul(var)?.ln()?;
                sq.add(inv_n)?
                    .neg()?
                    .add(half_n.digamma()?)?
                    .sub(ln_beta)?
                    .shift(-LN_2PI)?
                    .scale(0.5)
            }
            PosteriorVars::Poisson { rate, n } => {
                let tape = rate.tape();
                let yv = tape.constant(y.clone());
                let ln_fact = tape.constant(y.map(|v| crate::tensor::special::lgamma_unchecked(v + 1.0)));
                let alpha = n.mul(rate)?;
                alpha
                    .digamma()?
                    .sub(n.ln()?)?
                    .mul(yv)?
                    .sub(rate)?
                    .sub(ln_fact)
            }
        }
    }

    /// Entropy of the posterior distribution per row.
    pub fn prior_entropy(&self) -> Result<Var<'t>> {
        match *self {
            PosteriorVars::Categorical { alpha } => {
                let k = alpha.shape()[1] as f64;
                let alpha = alpha.clamp(ALPHA_FLOOR, f64::INFINITY)?;
                let a0 = alpha.sum_rows()?;
                let mask = approx_mask(&a0.value());
                let exact = {
                    let log_b = alpha.lgamma()?.sum_rows()?.sub(a0.lgamma()?)?;
                    let mid = a0.shift(-k)?.mul(a0.digamma()?)?;
                    let last = alpha.shift(-1.0)?.mul(alpha.digamma()?)?.sum_rows()?;
                    log_b.add(mid)?.sub(last)?
                };
                let approx = alpha
                    .ln()?
                    .sum_rows()?
                    .scale(0.5)?
                    .sub(a0.ln()?.scale(k - 0.5)?)?
                    .shift((k - 1.0) / 2.0 * (1.0 + LN_2PI))?;
                approx.select(mask, exact)
            }
            PosteriorVars::Normal { var, n, .. } => {
                let alpha = n.scale(0.5)?;
                let ln_beta = alpha.mul(var)?.ln()?;
                let ln_lambda = n.ln()?;
                let mask = approx_mask(&alpha.value());
                let exact = ln_beta
                    .scale(1.5)?
                    .add(alpha.lgamma()?)?
                    .sub(ln_lambda.scale(0.5)?)?
                    .add(alpha)?
                    .sub(alpha.shift(1.5)?.mul(alpha.digamma()?)?)?
                    .shift(0.5 + 0.5 * LN_2PI)?;
                let approx = ln_beta
                    .scale(1.5)?
                    .sub(alpha.ln()?.scale(2.0)?)?
                    .sub(ln_lambda.scale(0.5)?)?
                    .shift(1.0 + LN_2PI)?;
                approx.select(mask, exact)
            }
            PosteriorVars::Poisson { rate, n } => {
                let alpha = n.mul(rate)?;
                let ln_beta = n.ln()?;
                let mask = approx_mask(&alpha.value());
                let exact = alpha
                    .add(alpha.lgamma()?)?
                    .sub(ln_beta)?
                    .add(alpha.scale(-1.0)?.shift(1.0)?.mul(alpha.digamma()?)?)?;
                let approx = alpha
                    .ln()?
                    .scale(0.5)?
                    .sub(ln_beta)?
                    .shift(0.5 + 0.5 * LN_2PI)?;
                approx.select(mask, exact)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::expfam::{expected_log_likelihood, prior_entropy, ConjugateParams};
    use crate::tensor::Tape;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn batch_matches_scalar_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &big in &[false, true] {
            let scale = if big { 1e6 } else { 1.0 };
            let tape = Tape::new();
            let rows = 6;

            // categorical
            let classes = 3;
            let mut chis = Vec::new();
            let mut ns = Vec::new();
            let mut ys = Vec::new();
            for _ in 0..rows {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                chis.push(raw.iter().map(|r| r / s).collect::<Vec<_>>());
                ns.push(rng.random_range(0.5..20.0) * scale);
                ys.push(rng.random_range(0..classes) as f64);
            }
            let alpha = Tensor::from_fn(rows, classes, |i, j| ns[i] * chis[i][j]);
            let post = PosteriorVars::Categorical {
                alpha: tape.var(alpha),
            };
            let y = Tensor::column(ys.clone());
            let ell = post.expected_log_likelihood(&y).unwrap().value();
            let ent = post.prior_entropy().unwrap().value();
            let kind = FamilyKind::Categorical { classes };
            for i in 0..rows {
                let cp = ConjugateParams::new(chis[i].clone(), ns[i]);
                assert!(close(ell.get(i, 0), expected_log_likelihood(ys[i], &cp, kind).unwrap()));
                assert!(close(ent.get(i, 0), prior_entropy(&cp, kind).unwrap()));
            }

            // normal
            let mus: Vec<f64> = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
            let vars: Vec<f64> = (0..rows).map(|_| rng.random_range(0.1..3.0)).collect();
            let post = PosteriorVars::Normal {
                mu: tape.var(Tensor::column(mus.clone())),
                var: tape.var(Tensor::column(vars.clone())),
                n: tape.var(Tensor::column(ns.clone())),
            };
            let ys: Vec<f64> = (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ell = post.expected_log_likelihood(&Tensor::column(ys.clone())).unwrap().value();
            let ent = post.prior_entropy().unwrap().value();
            for i in 0..rows {
                let cp = ConjugateParams::new(vec![mus[i], mus[i] * mus[i] + vars[i]], ns[i]);
                let k = FamilyKind::Normal;
                assert!(close(ell.get(i, 0), expected_log_likelihood(ys[i], &cp, k).unwrap()));
                assert!(close(ent.get(i, 0), prior_entropy(&cp, k).unwrap()));
            }

            // poisson
            let rates: Vec<f64> = (0..rows).map(|_| rng.random_range(0.2..5.0)).collect();
            let post = PosteriorVars::Poisson {
                rate: tape.var(Tensor::column(rates.clone())),
                n: tape.var(Tensor::column(ns.clone())),
            };
            let ys: Vec<f64> = (0..rows).map(|_| rng.random_range(0..8) as f64).collect();
            let ell = post.expected_log_likelihood(&Tensor::column(ys.clone())).unwrap().value();
            let ent = post.prior_entropy().unwrap().value();
            for i in 0..rows {
                let cp = ConjugateParams::new(vec![rates[i]], ns[i]);
                let k = FamilyKind::Poisson;
                assert!(close(ell.get(i, 0), expected_log_likelihood(ys[i], &cp, k).unwrap()));
                assert!(close(ent.get(i, 0), prior_entropy(&cp, k).unwrap()));
            }
        }
    }

    #[test]
    fn rejects_bad_targets() {
        let tape = Tape::new();
        let post = PosteriorVars::Poisson {
            rate: tape.var(Tensor::column(vec![1.0])),
            n: tape.var(Tensor::column(vec![1.0])),
        };
        assert!(post.expected_log_likelihood(&Tensor::column(vec![-1.0])).is_err());
        assert!(post.expected_log_likelihood(&Tensor::column(vec![1.0, 2.0])).is_err());
    }
}
