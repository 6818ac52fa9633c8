//! Posterior predictive distributions of the three families.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use super::{to_standard, ConjugateParams, FamilyKind, StandardParams, ALPHA_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::special::lgamma_unchecked;

/// Degrees of freedom above which the Student-t CDF switches from the
/// incomplete beta function to a first-order expansion around the Normal.
const T_EXPANSION_DF: f64 = 2e3;

#[derive(Clone, Debug, PartialEq)]
pub enum Predictive {
    Categorical { p: Vec<f64> },
    StudentT { df: f64, loc: f64, scale: f64 },
    /// Success probability `p = beta / (beta + 1)`; `beta` is kept so that
    /// `1 - p` stays accurate when the evidence is huge.
    NegBinomial { r: f64, beta: f64 },
}

pub fn posterior_predictive(post: &ConjugateParams, kind: FamilyKind) -> Result<Predictive> {
    Ok(match to_standard(post, kind)? {
        StandardParams::Dirichlet { alpha } => {
            let a0: f64 = alpha.iter().sum();
            Predictive::Categorical {
                p: alpha.iter().map(|a| a / a0).collect(),
            }
        }
        StandardParams::Nig {
            mu0,
            lambda,
            alpha,
            beta,
        } => Predictive::StudentT {
            df: 2.0 * alpha,
            loc: mu0,
            scale: (beta * (1.0 + 1.0 / lambda) / alpha).sqrt(),
        },
        StandardParams::Gamma { alpha, beta } => Predictive::NegBinomial { r: alpha, beta },
    })
}

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

/// `lgamma(r + k) - lgamma(r)`, summed directly when `r` is so large that the
/// two lgamma values would cancel catastrophically.
fn ln_rising(r: f64, k: u64) -> f64 {
    if r > 1e6 && k < 100_000 {
        (0..k).map(|j| (r + j as f64).ln()).sum()
    } else {
        lgamma_unchecked(r + k as f64) - lgamma_unchecked(r)
    }
}

/// `(log p, log(1 - p))` for `p = beta / (beta + 1)`.
fn nb_logs(beta: f64) -> (f64, f64) {
    (-(1.0 / beta).ln_1p(), -beta.ln_1p())
}

fn count(y: f64) -> Result<u64> {
    if y >= 0.0 && y.fract() == 0.0 && y.is_finite() {
        Ok(y as u64)
    } else {
        Err(Error::Domain(format!("{y} is not a count")))
    }
}

impl Predictive {
    pub fn log_prob(&self, y: f64) -> Result<f64> {
        match self {
            Predictive::Categorical { p } => {
                if y < 0.0 || y.fract() != 0.0 || y as usize >= p.len() {
                    return Err(Error::Domain(format!("{y} is not a class index")));
                }
                Ok(p[y as usize].max(ALPHA_FLOOR).ln())
            }
            &Predictive::StudentT { df, loc, scale } => {
                let z = (y - loc) / scale;
                Ok(lgamma_unchecked((df + 1.0) / 2.0) - lgamma_unchecked(df / 2.0)
                    - 0.5 * (df * PI).ln()
                    - scale.ln()
                    - (df + 1.0) / 2.0 * (z * z / df).ln_1p())
            }
            &Predictive::NegBinomial { r, beta } => {
                let k = count(y)?;
                let (ln_p, ln_q) = nb_logs(beta);
                Ok(ln_rising(r, k) - lgamma_unchecked(k as f64 + 1.0) + r * ln_p + k as f64 * ln_q)
            }
        }
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        match self {
            Predictive::Categorical { p } => {
                if y < 0.0 {
                    return Ok(0.0);
                }
                let k = (y.floor() as usize).min(p.len() - 1);
                Ok(p[..=k].iter().sum::<f64>().min(1.0))
            }
            &Predictive::StudentT { df, loc, scale } => {
                let t = (y - loc) / scale;
                if !t.is_finite() {
                    return Err(Error::Domain(format!("cdf evaluated at {y}")));
                }
                if df > T_EXPANSION_DF {
                    let phi = (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
                    return Ok((std_normal_cdf(t) - phi * (t + t * t * t) / (4.0 * df)).clamp(0.0, 1.0));
                }
                // P(|T| > |t|) = I_x(df/2, 1/2) with x = df/(df+t²). Near the
                // centre x → 1, where the complementary form keeps precision.
                let t2 = t * t;
                let tail = if t2 < df {
                    0.5 * (1.0 - beta_reg(0.5, df / 2.0, t2 / (df + t2)))
                } else {
                    0.5 * beta_reg(df / 2.0, 0.5, df / (df + t2))
                };
                Ok(if t > 0.0 { 1.0 - tail } else { tail })
            }
            &Predictive::NegBinomial { .. } => {
                if y < 0.0 {
                    return Ok(0.0);
                }
                let k = y.floor() as u64;
                let logs: Vec<f64> = self.neg_binomial_log_pmf_prefix(k);
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Ok((m.exp() * logs.iter().map(|l| (l - m).exp()).sum::<f64>()).min(1.0))
            }
        }
    }

    /// `log P(j)` for `j = 0..=k` by the ratio recurrence.
    fn neg_binomial_log_pmf_prefix(&self, k: u64) -> Vec<f64> {
        let Predictive::NegBinomial { r, beta } = *self else {
            return Vec::new();
        };
        let (ln_p, lq) = nb_logs(beta);
        let mut cur = r * ln_p;
        let mut out = Vec::with_capacity(k as usize + 1);
        out.push(cur);
        for j in 0..k {
            let jf = j as f64;
            cur += (jf + r).ln() - (jf + 1.0).ln() + lq;
            out.push(cur);
        }
        out
    }

    /// Mean of the target under the predictive (the most probable class for
    /// the categorical case).
    pub fn point(&self) -> f64 {
        match self {
            Predictive::Categorical { p } => argmax(p) as f64,
            &Predictive::StudentT { loc, .. } => loc,
            &Predictive::NegBinomial { r, beta } => r / beta,
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::from_standard;

    fn pred(s: StandardParams) -> Predictive {
        let (cp, kind) = from_standard(&s).unwrap();
        posterior_predictive(&cp, kind).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn laplace_rule() {
        let p = pred(StandardParams::Dirichlet {
            alpha: vec![2.0, 1.0],
        });
        assert_eq!(
            p,
            Predictive::Categorical {
                p: vec![2.0 / 3.0, 1.0 / 3.0]
            }
        );
        assert!((p.cdf(0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.cdf(1.0).unwrap(), 1.0);
    }

    #[test]
    fn student_t_of_default_regression_prior() {
        let p = pred(StandardParams::Nig {
            mu0: 0.0,
            lambda: 1.0,
            alpha: 0.5,
            beta: 50.0,
        });
        match p {
            Predictive::StudentT { df, scale, .. } => {
                assert_eq!(df, 1.0);
                assert!((scale - 200f64.sqrt()).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        assert!((p.cdf(0.0).unwrap() - 0.5).abs() < 1e-15);
        // Cauchy: F(loc + scale) = 3/4
        assert!((p.cdf(200f64.sqrt()).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn negative_binomial_zero_mass() {
        let p = pred(StandardParams::Gamma {
            alpha: 2.0,
            beta: 1.0,
        });
        // ∫ Poi(0|λ) Gamma(λ|2,1) dλ = ∫ λ e^{-2λ} dλ, by quadrature
        let quad = simpson(|l| l * (-2.0 * l).exp(), 0.0, 40.0, 200_000);
        assert!((p.log_prob(0.0).unwrap().exp() - quad).abs() < 1e-10);
        assert!((quad - 0.25).abs() < 1e-10);
    }

    #[test]
    fn student_t_normalizes() {
        for df in [5.0, 10.0, 50.0, 400.0] {
            let p = Predictive::StudentT {
                df,
                loc: 1.5,
                scale: 2.0,
            };
            let sd = 2.0 * (df / (df - 2.0)).sqrt();
            let (a, b) = (1.5 - 50.0 * sd, 1.5 + 50.0 * sd);
            let mass = simpson(|y| p.log_prob(y).unwrap().exp(), a, b, 400_000);
            assert!((mass - 1.0).abs() < 1e-6, "df {df}: {mass}");
            let by_cdf = p.cdf(b).unwrap() - p.cdf(a).unwrap();
            assert!((mass - by_cdf).abs() < 1e-6);
        }
    }

    #[test]
    fn student_t_cdf_is_continuous_at_expansion_switch() {
        for t in [-3.0, -1.0, -0.2, 0.4, 2.5] {
            let lo = Predictive::StudentT {
                df: T_EXPANSION_DF * (1.0 - 1e-9),
                loc: 0.0,
                scale: 1.0,
            };
            let hi = Predictive::StudentT {
                df: T_EXPANSION_DF * (1.0 + 1e-9),
                loc: 0.0,
                scale: 1.0,
            };
            assert!((lo.cdf(t).unwrap() - hi.cdf(t).unwrap()).abs() < 1e-7, "t {t}");
        }
    }

    #[test]
    fn negative_binomial_sums_to_one_and_matches_incomplete_beta() {
        for (r, beta) in [(0.7, 0.4), (3.0, 1.0), (40.0, 4.0), (250.0, 19.0)] {
            let p = beta / (beta + 1.0);
            let d = Predictive::NegBinomial { r, beta };
            let mut total = 0.0;
            let mut k = 0u64;
            loop {
                let m = d.log_prob(k as f64).unwrap().exp();
                total += m;
                if k as f64 > r / beta && m < 1e-14 {
                    break;
                }
                k += 1;
            }
            assert!((total - 1.0).abs() < 1e-10, "r {r} p {p}: {total}");
            for k in [0.0, 1.0, 4.0, 17.0] {
                let reference = beta_reg(r, k + 1.0, p);
                assert!((d.cdf(k).unwrap() - reference).abs() < 1e-10, "r {r} k {k}");
            }
        }
    }

    #[test]
    fn huge_evidence_negative_binomial_is_poisson_like() {
        // with r = nχ, beta = n and n → ∞ the predictive tends to Poi(χ)
        let n = 1e11;
        let d = Predictive::NegBinomial { r: n * 4.0, beta: n };
        let poi = |k: f64| (-4.0 + k * 4f64.ln() - lgamma_unchecked(k + 1.0)).exp();
        for k in [0.0, 2.0, 4.0, 9.0] {
            assert!((d.log_prob(k).unwrap().exp() - poi(k)).abs() < 1e-8);
        }
        let c: f64 = (0..=6).map(|k| poi(k as f64)).sum();
        assert!((d.cdf(6.0).unwrap() - c).abs() < 1e-8);
    }
}
