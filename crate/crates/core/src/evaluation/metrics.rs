use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::input("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Detector output for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    /// Log-likelihood under the predicted class's mixture; lower is more anomalous.
    pub score: f64,
    pub is_adversarial: bool,
    pub predicted_class: usize,
}

/// Average precision of ranking by `rank_score` descending, positives first
/// being ideal: `Σ_k (R_k − R_{k−1})·P_k` over the distinct score thresholds,
/// so tied scores enter the curve together.
pub fn average_precision(rank_score: &[f64], positive: &[bool]) -> Result<f64> {
    if rank_score.len() != positive.len() {
        return Err(Error::input("scores and flags differ in length"));
    }
    if rank_score.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 || total_pos == positive.len() {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..rank_score.len()).collect();
    order.sort_by(|&a, &b| rank_score[b].total_cmp(&rank_score[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = rank_score[order[i]];
        while i < order.len() && rank_score[order[i]] == threshold {
            tp += usize::from(positive[order[i]]);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// AUPRC with adversarial samples as positives, ranked by negative
/// log-likelihood. `group` restricts to samples predicted as that class.
pub fn auprc(scores: &[DetectionScore], group: Option<usize>) -> Result<f64> {
    let selected: Vec<&DetectionScore> = scores
        .iter()
        .filter(|s| group.is_none_or(|g| s.predicted_class == g))
        .collect();
    if let Some(s) = selected.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::input(format!("non-finite detection score {}", s.score)));
    }
    let rank: Vec<f64> = selected.iter().map(|s| -s.score).collect();
    let pos: Vec<bool> = selected.iter().map(|s| s.is_adversarial).collect();
    average_precision(&rank, &pos).map_err(|e| match (e, group) {
        (Error::UndefinedMetric(m), Some(g)) => Error::UndefinedMetric(format!("class {g}: {m}")),
        (e, _) => e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuprcTable {
    /// Per predicted class; `None` where the class lacks positives or negatives.
    pub per_class: BTreeMap<usize, Option<f64>>,
    /// Mean over the classes where the metric is defined.
    pub macro_average: f64,
    pub positives: usize,
}

/// Per-class AUPRC for classes `0..num_classes` plus their macro average.
pub fn auprc_table(scores: &[DetectionScore], num_classes: usize) -> Result<AuprcTable> {
    let mut per_class = BTreeMap::new();
    for class in 0..num_classes {
        let value = match auprc(scores, Some(class)) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        per_class.insert(class, value);
    }
    let defined: Vec<f64> = per_class.values().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric(
            "no class has both clean and adversarial samples".into(),
        ));
    }
    Ok(AuprcTable {
        macro_average: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        positives: scores.iter().filter(|s| s.is_adversarial).count(),
    })
}
