use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{accuracy, auc_pr, auc_roc, brier, mean_sem, regression_calibration, rmse};
use crate::data::{Dataset, OodSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::expfam::{FamilyKind, Predictive};
use crate::model::{uncertainties, PosteriorPrediction, Predictor};

/// Detection scores for one OOD set. Aleatoric scores are the negative
/// entropy of the predicted target distribution, epistemic scores the
/// posterior evidence; both treat ID test data as the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodScores {
    pub n: usize,
    pub alea_aucpr: f64,
    pub epist_aucpr: f64,
    pub alea_aucroc: f64,
    pub epist_aucroc: f64,
    /// Mean evidence on this set over mean evidence on the ID test set.
    pub confidence_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub family: String,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<f64>,
    pub mean_test_evidence: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ood: BTreeMap<String, OodScores>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// All numeric fields as `(name, value)`, OOD entries prefixed by their
    /// set name.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut out = vec![("n_test".to_string(), self.n_test as f64)];
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("rmse", self.rmse),
            ("brier", self.brier),
            ("calibration", self.calibration),
        ] {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        }
        out.push(("mean_test_evidence".into(), self.mean_test_evidence));
        for (name, s) in &self.ood {
            for (k, v) in [
                ("alea_aucpr", s.alea_aucpr),
                ("epist_aucpr", s.epist_aucpr),
                ("alea_aucroc", s.alea_aucroc),
                ("epist_aucroc", s.epist_aucroc),
                ("confidence_ratio", s.confidence_ratio),
            ] {
                out.push((format!("{name}/{k}"), v));
            }
        }
        out
    }

    /// Header line and one data row.
    pub fn to_csv(&self) -> String {
        let flat = self.flat();
        let mut s = String::from("dataset,family");
        for (k, _) in &flat {
            write!(s, ",{k}").unwrap();
        }
        write!(s, "\n{},{}", self.dataset, self.family).unwrap();
        for (_, v) in &flat {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Mean ± standard error of every metric across per-seed reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub family: String,
    pub metrics: BTreeMap<String, SummaryStat>,
}

impl Aggregate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,mean,sem,n\n");
        for (k, v) in &self.metrics {
            writeln!(s, "{k},{},{},{}", v.mean, v.sem, v.n).unwrap();
        }
        s
    }
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Aggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("aggregate of zero reports".into()))?;
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.flat() {
            values.entry(k).or_default().push(v);
        }
    }
    Ok(Aggregate {
        dataset: first.dataset.clone(),
        family: first.family.clone(),
        metrics: values
            .into_iter()
            .map(|(k, v)| {
                let (mean, sem) = mean_sem(&v);
                (k, SummaryStat { mean, sem, n: v.len() })
            })
            .collect(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores a model on the dataset's test split and on each OOD set.
pub fn evaluate(model: &impl Predictor, ds: &Dataset, ood: &[OodSet], exec: Exec) -> Result<EvalReport> {
    let family = model.family();
    if !ds.task.matches(family) {
        return Err(Error::Config(format!(
            "model family {} does not fit the {:?} task of `{}`",
            family.name(),
            ds.task,
            ds.name
        )));
    }
    if ds.test.is_empty() {
        return Err(Error::Config(format!("dataset `{}` has an empty test split", ds.name)));
    }
    let preds = model.predict_all(&ds.test.x, exec)?;
    let ood_preds = ood
        .iter()
        .map(|s| Ok((s.name.clone(), model.predict_all(&s.x, exec)?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(family, ds, &preds, &ood_preds)
}

/// As [`evaluate`] on precomputed posteriors.
pub fn evaluate_predictions(
    family: FamilyKind,
    ds: &Dataset,
    preds: &[PosteriorPrediction],
    ood: &[(String, Vec<PosteriorPrediction>)],
) -> Result<EvalReport> {
    let y = ds.test.y.data();
    if preds.len() != y.len() {
        return Err(Error::Contract("prediction count differs from test size".into()));
    }
    let predictive = preds
        .iter()
        .map(|p| crate::expfam::posterior_predictive(&p.posterior(), family))
        .collect::<Result<Vec<Predictive>>>()?;
    let mut report = EvalReport {
        dataset: ds.name.clone(),
        family: family.name().to_string(),
        n_test: preds.len(),
        accuracy: None,
        rmse: None,
        brier: None,
        calibration: None,
        mean_test_evidence: mean(&preds.iter().map(|p| p.n_post).collect::<Vec<_>>()),
        ood: BTreeMap::new(),
    };
    match family {
        FamilyKind::Categorical { .. } => {
            let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
            let probs: Vec<Vec<f64>> = predictive
                .iter()
                .map(|p| match p {
                    Predictive::Categorical { p } => p.clone(),
                    _ => unreachable!("categorical family"),
                })
                .collect();
            let hard: Vec<usize> = predictive.iter().map(|p| p.point() as usize).collect();
            report.accuracy = Some(accuracy(&hard, &labels)?);
            report.brier = Some(brier(&probs, &labels)?);
        }
        FamilyKind::Normal | FamilyKind::Poisson => {
            let point: Vec<f64> = predictive.iter().map(|p| ds.target_to_original(p.point())).collect();
            let truth: Vec<f64> = y.iter().map(|&v| ds.target_to_original(v)).collect();
            report.rmse = Some(rmse(&point, &truth)?);
            let cdfs = predictive
                .iter()
                .zip(y)
                .map(|(p, &v)| p.cdf(v))
                .collect::<Result<Vec<f64>>>()?;
            report.calibration = Some(regression_calibration(&cdfs)?);
        }
    }
    let scores = |ps: &[PosteriorPrediction]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut alea = Vec::with_capacity(ps.len());
        let mut epist = Vec::with_capacity(ps.len());
        for p in ps {
            let u = uncertainties(p, family)?;
            alea.push(-u.aleatoric);
            epist.push(u.epistemic);
        }
        Ok((alea, epist))
    };
    let (id_alea, id_epist) = scores(preds)?;
    let id_mean = mean(&id_epist);
    for (name, ps) in ood {
        let (alea, epist) = scores(ps)?;
        report.ood.insert(
            name.clone(),
            OodScores {
                n: ps.len(),
                alea_aucpr: auc_pr(&id_alea, &alea)?,
                epist_aucpr: auc_pr(&id_epist, &epist)?,
                alea_aucroc: auc_roc(&id_alea, &alea)?,
                epist_aucroc: auc_roc(&id_epist, &epist)?,
                confidence_ratio: mean(&epist) / id_mean,
            },
        );
    }
    Ok(report)
}
