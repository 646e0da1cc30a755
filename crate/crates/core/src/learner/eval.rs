use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::model::LinearSoftmaxModel;
use crate::learner::train::Dataset;
use crate::measure::{DiscreteMeasure, GroundMetric};

/// Indices of the `k` largest values, largest first. Ties go to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mean distance from each of the `k` top predictions to its nearest truth label.
pub fn top_k_cost(predicted: &DiscreteMeasure, truth: &[usize], metric: &GroundMetric, k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("top-k needs k >= 1".into()));
    }
    metric.check_size(predicted.len())?;
    if let Some(&bad) = truth.iter().find(|&&t| t >= predicted.len()) {
        return Err(Error::IndexOutOfRange { index: bad, len: predicted.len() });
    }
    let values = predicted.values().to_vec();
    let top = top_k_indices(&values, k.min(values.len()));
    let total: f64 = top.iter().map(|&p| truth.iter().map(|&t| metric.get(p, t)).fold(f64::INFINITY, f64::min)).sum();
    Ok(total / top.len() as f64)
}

/// Area under the ROC curve of `scores` against binary relevance, with
/// tied scores counted as half. `None` when either class is empty.
pub fn binary_auc(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(relevant).filter(|(_, &r)| r).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(relevant).filter(|(_, &r)| !r).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top_k_cost: f64,
    pub argmax_accuracy: f64,
    pub mean_semantic_distance: f64,
}

/// Scores `model` on `data`. A row's truth set is the support of its label;
/// the argmax counts as correct when it lands in that set, and its semantic
/// distance is the cost to the nearest truth label.
pub fn evaluate(model: &LinearSoftmaxModel, data: &Dataset, metric: &GroundMetric, k: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    metric.check_size(model.num_labels())?;
    let mut cost = 0.0;
    let mut hits = 0usize;
    let mut distance = 0.0;
    for i in 0..data.len() {
        let truth = data.label(i).support();
        let h = model.predict(data.feature(i))?;
        cost += top_k_cost(&h, &truth, metric, k)?;
        let guess = model.argmax_predict(data.feature(i))?;
        if truth.contains(&guess) {
            hits += 1;
        }
        distance += truth.iter().map(|&t| metric.get(guess, t)).fold(f64::INFINITY, f64::min);
    }
    let n = data.len() as f64;
    Ok(EvalReport { top_k_cost: cost / n, argmax_accuracy: hits as f64 / n, mean_semantic_distance: distance / n })
}
