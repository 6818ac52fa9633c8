//! Evaluation metrics. Scores that are percentages (accuracy, Brier,
//! calibration, AUCs) are reported on a 0..100 scale.

mod report;

pub use report::{
    aggregate, evaluate, evaluate_predictions, Aggregate, EvalReport, OodScores, SummaryStat,
};

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: length mismatch {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Contract(format!("{what}: empty input")));
    }
    Ok(())
}

/// Percentage of exact label matches.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    check_len(pred.len(), labels.len(), "accuracy")?;
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_len(preds.len(), targets.len(), "rmse")?;
    let sse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

const SIMPLEX_TOL: f64 = 1e-6;

fn check_simplex(probs: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    check_len(probs.len(), labels.len(), "brier")?;
    let c = probs[0].len();
    for (i, (p, &y)) in probs.iter().zip(labels).enumerate() {
        let s: f64 = p.iter().sum();
        if p.len() != c || p.iter().any(|v| !(*v >= -SIMPLEX_TOL)) || (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Contract(format!("row {i} is not a probability vector")));
        }
        if y >= c {
            return Err(Error::Contract(format!("label {y} out of range for {c} classes")));
        }
    }
    Ok(c)
}

/// `100 · mean_i ‖p_i − onehot(y_i)‖₂ / C`: the L2 norm, not its square.
pub fn brier(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let c = check_simplex(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(k, v)| (v - if k == y { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(100.0 * total / probs.len() as f64 / c as f64)
}

/// Classical Brier score `100 · mean_i ‖p_i − onehot(y_i)‖₂²`.
pub fn brier_squared(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_simplex(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(k, v)| (v - if k == y { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(100.0 * total / probs.len() as f64)
}

pub const CALIBRATION_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Regression calibration from the predictive CDF evaluated at each target.
///
/// For each level `p` the observed frequency is the fraction of CDF values in
/// `[0, p/2] ∪ [1 − p/2, 1]`, which a calibrated model hits with probability
/// `p`. The score is `100 · √(Σ_p (p − p̂)²)`.
pub fn regression_calibration(cdfs: &[f64]) -> Result<f64> {
    if cdfs.is_empty() {
        return Err(Error::Contract("calibration: empty input".into()));
    }
    if let Some(v) = cdfs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("calibration: cdf value {v} outside [0, 1]")));
    }
    let n = cdfs.len() as f64;
    let ss: f64 = CALIBRATION_LEVELS
        .iter()
        .map(|&p| {
            let hits = cdfs.iter().filter(|&&f| f <= p / 2.0 || f >= 1.0 - p / 2.0).count();
            (p - hits as f64 / n).powi(2)
        })
        .sum();
    Ok(100.0 * ss.sqrt())
}

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Contract("AUC needs non-empty ID and OOD score lists".into()));
    }
    if id.iter().chain(ood).any(|v| v.is_nan()) {
        return Err(Error::Contract("AUC scores contain NaN".into()));
    }
    Ok(())
}

/// Area under the precision-recall curve with ID as the positive class and
/// higher scores meaning "more in-distribution".
///
/// Step-wise estimator: `Σ_k (R_k − R_{k−1}) · P_k` over distinct thresholds
/// taken from high to low, tied scores entering together.
pub fn auc_pr(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut all: Vec<(f64, bool)> = id.iter().map(|&s| (s, true)).chain(ood.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = id.len() as f64;
    let (mut tp, mut fp, mut prev_recall, mut area) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0.total_cmp(&t) == Ordering::Equal {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / pos;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Ok(100.0 * area)
}

/// Area under the ROC curve, the Mann-Whitney statistic with ties counted
/// as one half (equal to the trapezoidal area).
pub fn auc_roc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut all: Vec<(f64, bool)> = id.iter().map(|&s| (s, true)).chain(ood.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Average ranks over ties, then the rank-sum form of the statistic.
    let mut rank_sum_id = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0.total_cmp(&all[i].0) == Ordering::Equal {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum_id += avg_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (n1, n0) = (id.len() as f64, ood.len() as f64);
    Ok(100.0 * (rank_sum_id - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Mean posterior evidence of each shifted set relative to the clean set.
pub fn confidence_ratio(clean_evidence: &[f64], shifted: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mean = |v: &[f64]| -> Result<f64> {
        if v.is_empty() {
            return Err(Error::Contract("confidence ratio over an empty set".into()));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    let base = mean(clean_evidence)?;
    shifted.iter().map(|s| Ok(mean(s)? / base)).collect()
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
