use std::cmp::Ordering;

use super::{NatPn, PosteriorPrediction, Predictor};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expfam::{ConjugateParams, FamilyKind};
use crate::tensor::Tensor;

fn canonical(a: &(&[f64], f64), b: &(&[f64], f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| {
        a.0.iter()
            .zip(b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Pools the prior with any number of `(χ_k, n_k)` updates:
/// `χ_post = (n_prior χ_prior + Σ n_k χ_k) / (n_prior + Σ n_k)`.
///
/// Updates are summed in a canonical order, so the result does not depend on
/// the order of `updates`. For the Normal family the posterior variance is
/// pooled directly rather than recovered as `χ₁ − χ₀²`.
pub fn combine(
    prior: &ConjugateParams,
    updates: &[(&[f64], f64)],
    family: FamilyKind,
) -> Result<(Vec<f64>, f64)> {
    let dim = family.stat_dim();
    if prior.chi.len() != dim || updates.iter().any(|u| u.0.len() != dim) {
        return Err(Error::Contract(format!(
            "updates do not match the {} family",
            family.name()
        )));
    }
    let mut ups: Vec<(&[f64], f64)> = updates.to_vec();
    ups.sort_by(canonical);
    let np = prior.n;
    let mut n_post = np;
    for u in &ups {
        n_post += u.1;
    }
    let chi = match family {
        FamilyKind::Normal => {
            let mut m = np * prior.chi[0];
            for u in &ups {
                m += u.1 * u.0[0];
            }
            let mu = m / n_post;
            let vp = prior.chi[1] - prior.chi[0] * prior.chi[0];
            let mut s = np * (vp + (prior.chi[0] - mu).powi(2));
            for u in &ups {
                let v = u.0[1] - u.0[0] * u.0[0];
                s += u.1 * (v + (u.0[0] - mu).powi(2));
            }
            vec![mu, mu * mu + s / n_post]
        }
        _ => (0..dim)
            .map(|j| {
                let mut acc = np * prior.chi[j];
                for u in &ups {
                    acc += u.1 * u.0[j];
                }
                acc / n_post
            })
            .collect(),
    };
    Ok((chi, n_post))
}

/// One member's prediction together with the family and prior it used.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleMember<'a> {
    pub family: FamilyKind,
    pub prior: &'a ConjugateParams,
    pub pred: &'a PosteriorPrediction,
}

/// Combines independently trained members by successive Bayesian updates of
/// the shared prior. The combined `chi_update` is the evidence-weighted mean
/// of the members' updates and `latent_logprob` their mean.
pub fn ensemble_combine(members: &[EnsembleMember<'_>]) -> Result<PosteriorPrediction> {
    let first = members
        .first()
        .ok_or_else(|| Error::Contract("ensemble of zero members".into()))?;
    for m in members {
        if m.family != first.family {
            return Err(Error::Contract(format!(
                "ensemble mixes {} and {} members",
                first.family.name(),
                m.family.name()
            )));
        }
        if m.prior != first.prior {
            return Err(Error::Contract("ensemble members use different priors".into()));
        }
    }
    let updates: Vec<(&[f64], f64)> = members
        .iter()
        .map(|m| (m.pred.chi_update.as_slice(), m.pred.n_update))
        .collect();
    let (chi_post, n_post) = combine(first.prior, &updates, first.family)?;
    let chi_update = if members.len() == 1 {
        first.pred.chi_update.clone()
    } else {
        let mut sorted = updates.clone();
        sorted.sort_by(canonical);
        let total: f64 = sorted.iter().map(|u| u.1).sum();
        (0..first.family.stat_dim())
            .map(|j| {
                if total > 0.0 {
                    sorted.iter().map(|u| u.1 * u.0[j]).sum::<f64>() / total
                } else {
                    sorted.iter().map(|u| u.0[j]).sum::<f64>() / sorted.len() as f64
                }
            })
            .collect()
    };
    let mut lps: Vec<f64> = members.iter().map(|m| m.pred.latent_logprob).collect();
    lps.sort_by(f64::total_cmp);
    Ok(PosteriorPrediction {
        chi_post,
        n_post,
        chi_update,
        n_update: n_post - first.prior.n,
        latent_logprob: lps.iter().sum::<f64>() / lps.len() as f64,
    })
}

/// Independently trained models sharing family and prior.
#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<NatPn>,
}

impl Ensemble {
    pub fn new(members: Vec<NatPn>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Contract("ensemble of zero members".into()))?;
        if members
            .iter()
            .any(|m| m.family() != first.family() || m.prior() != first.prior())
        {
            return Err(Error::Contract("ensemble members differ in family or prior".into()));
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[NatPn] {
        &self.members
    }
}

impl Predictor for Ensemble {
    fn family(&self) -> FamilyKind {
        self.members[0].family()
    }

    fn prior(&self) -> &ConjugateParams {
        self.members[0].prior()
    }

    fn predict_all(&self, x: &Tensor, exec: Exec) -> Result<Vec<PosteriorPrediction>> {
        let per_member = self
            .members
            .iter()
            .map(|m| m.predict_all(x, exec))
            .collect::<Result<Vec<_>>>()?;
        (0..x.rows())
            .map(|i| {
                let ms: Vec<EnsembleMember<'_>> = self
                    .members
                    .iter()
                    .zip(&per_member)
                    .map(|(m, p)| EnsembleMember {
                        family: m.family(),
                        prior: m.prior(),
                        pred: &p[i],
                    })
                    .collect();
                ensemble_combine(&ms)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(chi: Vec<f64>, n: f64, prior: &ConjugateParams, fam: FamilyKind) -> PosteriorPrediction {
        let (chi_post, n_post) = combine(prior, &[(&chi, n)], fam).unwrap();
        PosteriorPrediction {
            chi_post,
            n_post,
            chi_update: chi,
            n_update: n,
            latent_logprob: -1.0,
        }
    }

    #[test]
    fn single_member_is_identity() {
        let fam = FamilyKind::Normal;
        let prior = fam.default_prior();
        let p = pred(vec![0.3, 0.5], 17.5, &prior, fam);
        let e = ensemble_combine(&[EnsembleMember {
            family: fam,
            prior: &prior,
            pred: &p,
        }])
        .unwrap();
        assert_eq!(e, p);
    }

    #[test]
    fn identical_members_pool_evidence() {
        let fam = FamilyKind::Categorical { classes: 3 };
        let prior = fam.default_prior();
        let chi = vec![0.6, 0.3, 0.1];
        let p = pred(chi.clone(), 4.0, &prior, fam);
        let m = EnsembleMember {
            family: fam,
            prior: &prior,
            pred: &p,
        };
        let e = ensemble_combine(&[m, m]).unwrap();
        let (want, n) = combine(&prior, &[(&chi, 8.0)], fam).unwrap();
        assert_eq!(e.n_post, n);
        for (a, b) in e.chi_post.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_evidence_members_recover_prior() {
        let fam = FamilyKind::Poisson;
        let prior = fam.default_prior();
        let ps: Vec<_> = [3.0, 7.0, 0.5]
            .iter()
            .map(|&r| pred(vec![r], 0.0, &prior, fam))
            .collect();
        let ms: Vec<_> = ps
            .iter()
            .map(|p| EnsembleMember {
                family: fam,
                prior: &prior,
                pred: p,
            })
            .collect();
        let e = ensemble_combine(&ms).unwrap();
        assert_eq!(e.chi_post, prior.chi);
        assert_eq!(e.n_post, prior.n);
    }

    #[test]
    fn mixed_families_rejected() {
        let p1 = FamilyKind::Poisson.default_prior();
        let a = pred(vec![1.0], 1.0, &p1, FamilyKind::Poisson);
        let err = ensemble_combine(&[
            EnsembleMember {
                family: FamilyKind::Poisson,
                prior: &p1,
                pred: &a,
            },
            EnsembleMember {
                family: FamilyKind::Normal,
                prior: &p1,
                pred: &a,
            },
        ]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
