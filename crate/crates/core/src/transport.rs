//! Transductive optimal-transport transfer over the joint
//! calibration + query similarity matrix.
//!
//! The joint logits `S in R^{K x (N+M)}` are turned into soft codes by
//! solving the entropy-regularized assignment problem over the transportation
//! polytope whose row marginal is the label prior `kappa` (estimated from
//! calibration labels) and whose column marginal is uniform `1/(N+M)`. The
//! solution is `Q* = Diag(r) Q0 Diag(c)` with
//!
//! ```text
//! Q0 = exp(S / tau) / sum(exp(S / tau))          (global sum)
//! r  = kappa / (Q0 c)                            (length K)
//! c  = nu / (Q0^T r)                             (length N+M)
//! ```
//!
//! iterated a fixed number of times, then each column of `Q*` is divided by
//! its sum so columns read as per-sample class assignments. Calibration and
//! query columns are processed jointly and symmetrically, which preserves the
//! exchangeability the conformal step relies on.
//!
//! The update for `c` uses `Q0^T r`; writing it with `Q0` untransposed is
//! dimensionally inconsistent, and `Diag(r) Q0 Diag(c)` forces `r` to have
//! length `K` and `c` length `N+M`.

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_pipeline, PredictionSet};
use crate::error::{ConfotError, Result};
use crate::score::ScoreKind;
use crate::types::{ClassMarginal, LabeledSplit, ProbabilityMatrix, SimilarityMatrix};

/// How the label-marginal prior is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPrior {
    /// Class frequencies observed in the calibration labels.
    EmpiricalCalibration,
    /// `1/K` for every class.
    Uniform,
}

/// Settings for one transduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    /// Entropic strength `tau` of the initial code matrix.
    pub temperature: f64,
    /// Number of renormalization iterations `T`. A fixed small count keeps
    /// runs deterministic; three suffice in practice.
    pub iterations: usize,
    pub prior: LabelPrior,
    /// Denominators below this floor are clamped to it before dividing.
    pub epsilon_floor: f64,
    /// Add one pseudo-count per class to the empirical prior. Off by default:
    /// raw frequencies are used even when some class never appears, which
    /// leaves that class with an all-zero code row.
    pub laplace_smoothing: bool,
    /// When set, `iterations` becomes a cap and the loop stops as soon as the
    /// row-marginal residual drops below this tolerance.
    pub convergence_tolerance: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            iterations: 3,
            prior: LabelPrior::EmpiricalCalibration,
            epsilon_floor: 1e-12,
            laplace_smoothing: false,
            convergence_tolerance: None,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(ConfotError::Parameter {
                name: "temperature",
                reason: format!("must be a positive finite real, got {}", self.temperature),
            });
        }
        if self.iterations < 1 {
            return Err(ConfotError::Parameter {
                name: "iterations",
                reason: "at least one renormalization iteration is required".into(),
            });
        }
        if self.epsilon_floor.is_nan() || self.epsilon_floor < 0.0 {
            return Err(ConfotError::Parameter {
                name: "epsilon_floor",
                reason: format!("must be nonnegative, got {}", self.epsilon_floor),
            });
        }
        if let Some(tol) = self.convergence_tolerance {
            if tol <= 0.0 || !tol.is_finite() {
                return Err(ConfotError::Parameter {
                    name: "convergence_tolerance",
                    reason: format!("must be a positive finite real, got {tol}"),
                });
            }
        }
        Ok(())
    }
}

/// The finalized soft codes plus diagnostics about the run.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// `K x n` column-normalized codes.
    codes: Array2<f64>,
    /// The row marginal the plan was constrained to.
    pub row_marginal: ClassMarginal,
    /// Mass each column carries before normalization, `1/n`.
    pub column_marginal_mass: f64,
    /// `max_k |rowsum_k - kappa_k|` of the pre-normalization codes.
    pub row_sum_residual: f64,
    /// `max_i |colsum_i - 1/n|` of the pre-normalization codes.
    pub col_sum_residual: f64,
    /// Classes whose prior weight is exactly zero; their code rows are zero
    /// and they can never enter a prediction set.
    pub zero_weight_classes: Vec<usize>,
}

impl TransportPlan {
    pub fn codes(&self) -> &Array2<f64> {
        &self.codes
    }

    pub fn num_classes(&self) -> usize {
        self.codes.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.codes.ncols()
    }

    /// Code columns `[start, end)` as a probability matrix.
    pub fn columns_as_probabilities(&self, start: usize, end: usize) -> Result<ProbabilityMatrix> {
        if start > end || end > self.num_samples() {
            return Err(ConfotError::Shape(format!(
                "column range {start}..{end} outside 0..{}",
                self.num_samples()
            )));
        }
        ProbabilityMatrix::new(
            self.codes
                .slice(ndarray::s![.., start..end])
                .to_owned(),
        )
    }
}

/// Concatenate calibration columns then query columns into one matrix.
pub fn assemble_joint_matrix(
    cal_logits: &SimilarityMatrix,
    query_logits: &SimilarityMatrix,
) -> Result<SimilarityMatrix> {
    if cal_logits.num_classes() != query_logits.num_classes() {
        return Err(ConfotError::Shape(format!(
            "calibration has {} classes, query has {}",
            cal_logits.num_classes(),
            query_logits.num_classes()
        )));
    }
    let joint = concatenate(
        Axis(1),
        &[cal_logits.values().view(), query_logits.values().view()],
    )
    .map_err(|e| ConfotError::Shape(e.to_string()))?;
    SimilarityMatrix::new(joint)
}

/// Estimate the label-marginal prior from calibration labels.
pub fn estimate_label_marginal(
    cal_labels: &[usize],
    num_classes: usize,
    prior: LabelPrior,
    laplace_smoothing: bool,
) -> Result<ClassMarginal> {
    if num_classes < 2 {
        return Err(ConfotError::Shape(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    match prior {
        LabelPrior::Uniform => ClassMarginal::uniform(num_classes),
        LabelPrior::EmpiricalCalibration => {
            if cal_labels.is_empty() {
                return Err(ConfotError::Data(
                    "empirical prior needs at least one calibration label".into(),
                ));
            }
            let mut counts = vec![0.0_f64; num_classes];
            for &y in cal_labels {
                if y >= num_classes {
                    return Err(ConfotError::Index {
                        name: "label",
                        value: y,
                        limit: num_classes,
                    });
                }
                counts[y] += 1.0;
            }
            let total = if laplace_smoothing {
                counts.iter_mut().for_each(|c| *c += 1.0);
                cal_labels.len() as f64 + num_classes as f64
            } else {
                cal_labels.len() as f64
            };
            ClassMarginal::new(Array1::from_vec(counts) / total)
        }
    }
}

/// `y_k = sum_i q[k, i] * c[i]` over a contiguous class-major matrix.
fn rows_dot(q: &[f64], n: usize, c: &[f64], out: &mut [f64]) {
    for (k, row) in q.chunks_exact(n).enumerate() {
        let mut acc = 0.0;
        for (qv, cv) in row.iter().zip(c) {
            acc += qv * cv;
        }
        out[k] = acc;
    }
}

/// `z_i = sum_k r[k] * q[k, i]` over a contiguous class-major matrix.
fn cols_dot(q: &[f64], n: usize, r: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (k, row) in q.chunks_exact(n).enumerate() {
        let rk = r[k];
        for (acc, qv) in out.iter_mut().zip(row) {
            *acc += rk * qv;
        }
    }
}

/// Run the fixed-iteration renormalization and emit column-normalized codes.
pub fn sinkhorn_codes(
    similarity: &SimilarityMatrix,
    kappa: &ClassMarginal,
    config: &TransportConfig,
) -> Result<TransportPlan> {
    config.validate()?;
    let k = similarity.num_classes();
    let n = similarity.num_samples();
    if kappa.len() != k {
        return Err(ConfotError::Shape(format!(
            "prior has {} entries for {} classes",
            kappa.len(),
            k
        )));
    }

    let zero_weight_classes = kappa.zero_entries();
    if !zero_weight_classes.is_empty() {
        log::warn!(
            "label prior is zero for classes {:?}; their code rows will be all-zero",
            zero_weight_classes
        );
    }

    let tau = config.temperature;
    let eps = config.epsilon_floor;
    let nu = 1.0 / n as f64;

    // Q0 = exp(S/tau) / global sum, stabilized by the global max of S/tau.
    let mut q = similarity.values().to_owned();
    let global_max = q.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / tau;
    q.mapv_inplace(|x| (x / tau - global_max).exp());
    let total: f64 = q.sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(ConfotError::Numeric(format!(
            "global normalizer of the initial codes is {total}"
        )));
    }
    q.mapv_inplace(|x| x / total);

    let q_slice = q.as_slice().expect("standard layout");
    let kappa_w = kappa.weights();
    let mut r = vec![0.0_f64; k];
    let mut c = vec![1.0_f64; n];
    let mut denom_k = vec![0.0_f64; k];
    let mut denom_n = vec![0.0_f64; n];

    for _ in 0..config.iterations {
        rows_dot(q_slice, n, &c, &mut denom_k);
        for ((rv, &kw), &d) in r.iter_mut().zip(kappa_w).zip(&denom_k) {
            *rv = kw / d.max(eps);
        }
        cols_dot(q_slice, n, &r, &mut denom_n);
        for (cv, &d) in c.iter_mut().zip(&denom_n) {
            *cv = nu / d.max(eps);
        }
        if let Some(tol) = config.convergence_tolerance {
            // The c update makes column sums exact, so convergence is
            // measured on the row marginal alone.
            rows_dot(q_slice, n, &c, &mut denom_k);
            let residual = r
                .iter()
                .zip(&denom_k)
                .zip(kappa_w)
                .fold(0.0_f64, |acc, ((&rv, &d), &kw)| {
                    acc.max((rv * d - kw).abs())
                });
            if residual <= tol {
                break;
            }
        }
    }
    if r.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(ConfotError::Numeric(
            "renormalization vectors became non-finite".into(),
        ));
    }

    // Q* = Diag(r) Q0 Diag(c), in place.
    {
        let q_mut = q.as_slice_mut().expect("standard layout");
        for (kk, row) in q_mut.chunks_exact_mut(n).enumerate() {
            let rk = r[kk];
            for (qv, cv) in row.iter_mut().zip(&c) {
                *qv *= rk * cv;
            }
        }
    }

    // Marginal residuals of the pre-normalization codes, then column sums for
    // the final normalization, in one pass.
    let mut row_sum_residual = 0.0_f64;
    let mut col_sums = vec![0.0_f64; n];
    {
        let q_ro = q.as_slice().expect("standard layout");
        for (kk, row) in q_ro.chunks_exact(n).enumerate() {
            let mut rs = 0.0;
            for (acc, qv) in col_sums.iter_mut().zip(row) {
                rs += qv;
                *acc += qv;
            }
            row_sum_residual = row_sum_residual.max((rs - kappa_w[kk]).abs());
        }
    }
    let col_sum_residual = col_sums
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max((s - nu).abs()));

    {
        let q_mut = q.as_slice_mut().expect("standard layout");
        for row in q_mut.chunks_exact_mut(n) {
            for (qv, &s) in row.iter_mut().zip(&col_sums) {
                *qv /= s.max(eps);
            }
        }
    }

    // Columns must now read as probability vectors.
    for (i, col) in q.axis_iter(Axis(1)).enumerate() {
        let s: f64 = col.sum();
        if !s.is_finite() || (s - 1.0).abs() > 1e-9 {
            return Err(ConfotError::Numeric(format!(
                "normalized code column {i} sums to {s}"
            )));
        }
    }

    Ok(TransportPlan {
        codes: q,
        row_marginal: kappa.clone(),
        column_marginal_mass: nu,
        row_sum_residual,
        col_sum_residual,
        zero_weight_classes,
    })
}

/// Joint transduction of calibration and query logits, returning the code
/// columns of each side as probability inputs for the conformal step.
pub fn conf_ot_transfer(
    cal: &LabeledSplit,
    query_logits: &SimilarityMatrix,
    config: &TransportConfig,
) -> Result<(ProbabilityMatrix, ProbabilityMatrix, TransportPlan)> {
    let joint = assemble_joint_matrix(&cal.logits, query_logits)?;
    let kappa = estimate_label_marginal(
        &cal.labels,
        cal.num_classes(),
        config.prior,
        config.laplace_smoothing,
    )?;
    let plan = sinkhorn_codes(&joint, &kappa, config)?;
    let n = cal.num_samples();
    let cal_codes = plan.columns_as_probabilities(0, n)?;
    let query_codes = plan.columns_as_probabilities(n, plan.num_samples())?;
    Ok((cal_codes, query_codes, plan))
}

/// The whole transductive procedure: assemble, transduce, split the codes
/// back into calibration and query blocks, then run split conformal
/// prediction on the codes.
pub fn conf_ot_pipeline(
    cal: &LabeledSplit,
    query_logits: &SimilarityMatrix,
    config: &TransportConfig,
    kind: &ScoreKind,
    alpha: f64,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    let (cal_codes, query_codes, _) = conf_ot_transfer(cal, query_logits, config)?;
    conformal_pipeline(&cal_codes, &cal.labels, &query_codes, kind, alpha, seed)
}
