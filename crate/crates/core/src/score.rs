//! LAC, APS, and RAPS non-conformity scores.
//!
//! All three consume a probability column `p` and a candidate label `y`;
//! smaller scores mean more conforming:
//!
//! - LAC:  `1 - p[y]`
//! - APS:  `rho + p[y] * u`, where `rho` is the total mass of classes with
//!   probability strictly greater than `p[y]` and `u` in `[0, 1]` breaks ties
//!   to reach exact marginal coverage.
//! - RAPS: APS plus `lambda * max(0, o - k_reg)` with `o` the 1-based rank of
//!   the label under strict descending order.
//!
//! One `u` is drawn per sample and reused for every label of that sample, so
//! prediction sets stay nested in the calibrated threshold.

use ndarray::ArrayView1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfotError, Result};

/// Which non-conformity score to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreKind {
    Lac,
    Aps,
    Raps { lambda: f64, k_reg: usize },
}

impl ScoreKind {
    /// RAPS with the standard hyper-parameters `lambda = 0.001`, `k_reg = 1`.
    pub fn raps_default() -> Self {
        ScoreKind::Raps {
            lambda: 0.001,
            k_reg: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ScoreKind::Raps { lambda, .. } = self {
            if !lambda.is_finite() || *lambda < 0.0 {
                return Err(ConfotError::Parameter {
                    name: "lambda",
                    reason: format!("RAPS penalty must be nonnegative, got {lambda}"),
                });
            }
        }
        Ok(())
    }

    /// Short token used in reports ("lac", "aps", "raps").
    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::Lac => "lac",
            ScoreKind::Aps => "aps",
            ScoreKind::Raps { .. } => "raps",
        }
    }
}

/// One uniform tie-break value per sample, drawn from a seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TieBreaker {
    u_values: Vec<f64>,
}

impl TieBreaker {
    /// Draw `n` values in `[0, 1]` from a ChaCha stream seeded with `seed`.
    pub fn generate(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            u_values: (0..n).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    pub fn from_values(u_values: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = u_values
            .iter()
            .find(|&&u| !u.is_finite() || !(0.0..=1.0).contains(&u))
        {
            return Err(ConfotError::Parameter {
                name: "u",
                reason: format!("tie-break values must lie in [0, 1], got {bad}"),
            });
        }
        Ok(Self { u_values })
    }

    pub fn len(&self) -> usize {
        self.u_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.u_values
    }
}

fn check_label(len: usize, label: usize) -> Result<()> {
    if label >= len {
        return Err(ConfotError::Index {
            name: "label",
            value: label,
            limit: len,
        });
    }
    Ok(())
}

fn check_u(u: f64) -> Result<()> {
    if !u.is_finite() || !(0.0..=1.0).contains(&u) {
        return Err(ConfotError::Parameter {
            name: "u",
            reason: format!("tie-break value must lie in [0, 1], got {u}"),
        });
    }
    Ok(())
}

/// `1 - p[label]`.
pub fn lac_score(probs_column: ArrayView1<'_, f64>, label: usize) -> Result<f64> {
    check_label(probs_column.len(), label)?;
    Ok(1.0 - probs_column[label])
}

/// `rho + p[label] * u`, with `rho` the mass of classes strictly more likely
/// than the label. Ties with `p[label]` are excluded from `rho`.
pub fn aps_score(probs_column: ArrayView1<'_, f64>, label: usize, u: f64) -> Result<f64> {
    check_label(probs_column.len(), label)?;
    check_u(u)?;
    let p_label = probs_column[label];
    let rho: f64 = probs_column.iter().filter(|&&p| p > p_label).sum();
    Ok(rho + p_label * u)
}

/// APS plus the rank penalty `lambda * max(0, o - k_reg)`.
pub fn raps_score(
    probs_column: ArrayView1<'_, f64>,
    label: usize,
    u: f64,
    lambda: f64,
    k_reg: usize,
) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(ConfotError::Parameter {
            name: "lambda",
            reason: format!("RAPS penalty must be nonnegative, got {lambda}"),
        });
    }
    let aps = aps_score(probs_column, label, u)?;
    let p_label = probs_column[label];
    let rank = probs_column.iter().filter(|&&p| p > p_label).count() + 1;
    Ok(aps + lambda * (rank.saturating_sub(k_reg)) as f64)
}

/// Score every candidate label of one sample with the same `u`.
pub fn score_all_labels(
    probs_column: ArrayView1<'_, f64>,
    u: f64,
    kind: &ScoreKind,
) -> Result<Vec<f64>> {
    kind.validate()?;
    check_u(u)?;
    let k = probs_column.len();
    match kind {
        ScoreKind::Lac => Ok(probs_column.iter().map(|&p| 1.0 - p).collect()),
        ScoreKind::Aps => {
            let (rho, _) = cumulative_strictly_greater(probs_column);
            Ok((0..k).map(|y| rho[y] + probs_column[y] * u).collect())
        }
        ScoreKind::Raps { lambda, k_reg } => {
            let (rho, rank) = cumulative_strictly_greater(probs_column);
            Ok((0..k)
                .map(|y| {
                    rho[y]
                        + probs_column[y] * u
                        + lambda * (rank[y].saturating_sub(*k_reg)) as f64
                })
                .collect())
        }
    }
}

/// For each label, the mass of strictly-greater entries and the 1-based rank
/// under strict descending order. Computed once per column via a sort; equal
/// probabilities share rho and rank.
fn cumulative_strictly_greater(probs: ArrayView1<'_, f64>) -> (Vec<f64>, Vec<usize>) {
    let k = probs.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());

    let mut rho = vec![0.0; k];
    let mut rank = vec![0; k];
    let mut mass_before = 0.0;
    let mut idx = 0;
    while idx < k {
        // Group labels tied at the same probability.
        let mut end = idx;
        while end < k && probs[order[end]] == probs[order[idx]] {
            end += 1;
        }
        for &label in &order[idx..end] {
            rho[label] = mass_before;
            rank[label] = idx + 1;
        }
        for &label in &order[idx..end] {
            mass_before += probs[label];
        }
        idx = end;
    }
    (rho, rank)
}
