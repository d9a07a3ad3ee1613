//! Evaluation metrics: empirical coverage, average set size,
//! class-conditional coverage violation, and Top-1 accuracy.

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::error::{ConfotError, Result};
use crate::types::{argmax_class, ProbabilityMatrix};

/// One trial's metrics for a single (method, score, alpha) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub coverage: f64,
    pub avg_size: f64,
    /// Class-conditional coverage violation, in percentage points.
    pub ccv: f64,
    pub alpha: f64,
    pub n_test: usize,
}

impl MetricsReport {
    /// Assemble all four metrics for one evaluated trial.
    pub fn compute(
        probs: &ProbabilityMatrix,
        sets: &[PredictionSet],
        labels: &[usize],
        alpha: f64,
    ) -> Result<Self> {
        let num_classes = probs.num_classes();
        Ok(Self {
            top1: top1_accuracy(probs, labels)?,
            coverage: empirical_coverage(sets, labels)?,
            avg_size: average_set_size(sets)?,
            ccv: ccv(sets, labels, alpha, num_classes)?,
            alpha,
            n_test: labels.len(),
        })
    }
}

/// Fraction of samples whose true label is a member of its set.
pub fn empirical_coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(ConfotError::Shape(format!(
            "{} sets for {} labels",
            sets.len(),
            labels.len()
        )));
    }
    if sets.is_empty() {
        return Err(ConfotError::Data("coverage of an empty test set".into()));
    }
    let covered = sets
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok(covered as f64 / sets.len() as f64)
}

/// Mean set cardinality, also known as inefficiency.
pub fn average_set_size(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(ConfotError::Data("size of an empty set list".into()));
    }
    let total: usize = sets.iter().map(PredictionSet::len).sum();
    Ok(total as f64 / sets.len() as f64)
}

/// `100 x` the mean absolute gap between per-class empirical coverage and
/// `1 - alpha`. Classes with no test samples are excluded from the mean
/// (their per-class coverage is undefined).
pub fn ccv(sets: &[PredictionSet], labels: &[usize], alpha: f64, num_classes: usize) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(ConfotError::Shape(format!(
            "{} sets for {} labels",
            sets.len(),
            labels.len()
        )));
    }
    let mut covered = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (s, &y) in sets.iter().zip(labels) {
        if y >= num_classes {
            return Err(ConfotError::Index {
                name: "label",
                value: y,
                limit: num_classes,
            });
        }
        totals[y] += 1;
        if s.contains(y) {
            covered[y] += 1;
        }
    }
    let mut gap_sum = 0.0;
    let mut present = 0usize;
    for k in 0..num_classes {
        if totals[k] > 0 {
            let cov_k = covered[k] as f64 / totals[k] as f64;
            gap_sum += (cov_k - (1.0 - alpha)).abs();
            present += 1;
        }
    }
    if present == 0 {
        return Err(ConfotError::Data("no class has any test sample".into()));
    }
    Ok(100.0 * gap_sum / present as f64)
}

/// Fraction of samples whose argmax class equals the true label.
pub fn top1_accuracy(probs: &ProbabilityMatrix, labels: &[usize]) -> Result<f64> {
    if probs.num_samples() != labels.len() {
        return Err(ConfotError::Shape(format!(
            "{} probability columns for {} labels",
            probs.num_samples(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(ConfotError::Data("accuracy of an empty test set".into()));
    }
    let predictions = argmax_class(probs);
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
