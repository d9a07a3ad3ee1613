//! Experiment orchestration: repeated random calibration/test splits, base
//! vs transductive pipelines across scores and error rates, mini-batch query
//! mode, and aggregated reporting.
//!
//! Within one trial the base and transductive methods share the same split
//! and the same tie-break stream, so any set-size difference is attributable
//! to the method. Trials use seed `base_seed + index` and are independent, so
//! they run on a worker pool; aggregation is a single ordered reduction.

use ndarray::Axis;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::conformal::{
    build_prediction_set, calibrate_threshold, conformal_pipeline_with_u, ConformalThreshold,
    PredictionSet,
};
use crate::error::{ConfotError, Result};
use crate::io::{load_labels_csv, load_logits, write_report, ReportFormat};
use crate::metrics::MetricsReport;
use crate::score::{score_all_labels, ScoreKind, TieBreaker};
use crate::transport::{conf_ot_transfer, TransportConfig};
use crate::types::{softmax_columns, LabeledSplit, ProbabilityMatrix, SimilarityMatrix};

/// Which pipeline produces the probability inputs for the conformal step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain softmax of the raw logits at temperature 1.
    Base,
    /// Transductive optimal-transport codes.
    ConfOt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::ConfOt => "conf_ot",
        }
    }
}

/// Everything one experiment run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub logits_path: PathBuf,
    pub labels_path: PathBuf,
    pub alphas: Vec<f64>,
    pub scores: Vec<ScoreKind>,
    pub methods: Vec<Method>,
    pub cal_ratio: f64,
    pub seeds: usize,
    pub base_seed: u64,
    pub transport: TransportConfig,
    /// Absent means the full query set is transduced at once.
    pub query_batch_size: Option<usize>,
    /// Reuse the threshold calibrated on the full-batch transduction instead
    /// of recalibrating per chunk; only meaningful in batch mode.
    pub reuse_full_batch_threshold: bool,
    pub output_path: PathBuf,
    pub output_format: ReportFormat,
}

impl ExperimentConfig {
    /// Standard protocol defaults: alphas {0.1, 0.05}, LAC/APS/RAPS(0.001, 1),
    /// both methods, equal split, 20 seeds, tau 1, T 3, empirical prior.
    pub fn with_defaults(logits_path: PathBuf, labels_path: PathBuf) -> Self {
        Self {
            logits_path,
            labels_path,
            alphas: vec![0.1, 0.05],
            scores: vec![ScoreKind::Lac, ScoreKind::Aps, ScoreKind::raps_default()],
            methods: vec![Method::Base, Method::ConfOt],
            cal_ratio: 0.5,
            seeds: 20,
            base_seed: 0,
            transport: TransportConfig::default(),
            query_batch_size: None,
            reuse_full_batch_threshold: false,
            output_path: PathBuf::from("report.json"),
            output_format: ReportFormat::Json,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cal_ratio > 0.0 && self.cal_ratio < 1.0) {
            return Err(ConfotError::Parameter {
                name: "cal_ratio",
                reason: format!("must lie strictly inside (0, 1), got {}", self.cal_ratio),
            });
        }
        if self.seeds < 1 {
            return Err(ConfotError::Parameter {
                name: "seeds",
                reason: "at least one seed is required".into(),
            });
        }
        if self.alphas.is_empty() || self.scores.is_empty() || self.methods.is_empty() {
            return Err(ConfotError::Parameter {
                name: "alphas/scores/methods",
                reason: "each list needs at least one entry".into(),
            });
        }
        for &alpha in &self.alphas {
            if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
                return Err(ConfotError::Parameter {
                    name: "alpha",
                    reason: format!("must lie strictly inside (0, 1), got {alpha}"),
                });
            }
        }
        for score in &self.scores {
            score.validate()?;
        }
        if self.query_batch_size == Some(0) {
            return Err(ConfotError::Parameter {
                name: "query_batch_size",
                reason: "batch size must be at least 1".into(),
            });
        }
        self.transport.validate()
    }
}

/// One (method, score, alpha) result within a single trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub score: ScoreKind,
    pub alpha: f64,
    pub metrics: MetricsReport,
}

/// Per-seed metric arrays for one (method, score, alpha) combination.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PerSeedMetrics {
    pub top1: Vec<f64>,
    pub coverage: Vec<f64>,
    pub avg_size: Vec<f64>,
    pub ccv: Vec<f64>,
}

/// Mean/std summary across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub top1_mean: f64,
    pub top1_std: f64,
    pub cov_mean: f64,
    pub cov_std: f64,
    pub size_mean: f64,
    pub size_std: f64,
    pub ccv_mean: f64,
    pub ccv_std: f64,
}

/// One aggregated row of the final report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub score: ScoreKind,
    pub alpha: f64,
    pub per_seed: PerSeedMetrics,
    pub summary: SummaryStats,
}

/// Mean relative set-size reduction of the transductive method against the
/// base method, paired per seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedSizeReduction {
    pub score: ScoreKind,
    pub alpha: f64,
    pub mean_relative_reduction: f64,
}

/// The aggregated experiment output written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatedReport {
    pub config: ExperimentConfig,
    pub generated_at_unix: u64,
    pub seeds: usize,
    pub rows: Vec<ReportRow>,
    /// Present when both methods ran: size comparison per (score, alpha).
    pub paired_size_reduction: Vec<PairedSizeReduction>,
    /// Set when a trial failed; rows then cover only completed seeds.
    pub failed: Option<String>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation, so a single seed reports exactly zero.
fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Seeded uniform split: the first `floor(n * cal_ratio)` entries of a random
/// permutation go to calibration, the rest to test.
pub fn split_cal_test(
    data: &LabeledSplit,
    cal_ratio: f64,
    seed: u64,
) -> Result<(LabeledSplit, LabeledSplit)> {
    if !(cal_ratio > 0.0 && cal_ratio < 1.0) {
        return Err(ConfotError::Parameter {
            name: "cal_ratio",
            reason: format!("must lie strictly inside (0, 1), got {cal_ratio}"),
        });
    }
    let n = data.num_samples();
    if n < 2 {
        return Err(ConfotError::Data(
            "splitting requires at least 2 samples".into(),
        ));
    }
    let n_cal = ((n as f64) * cal_ratio).floor() as usize;
    if n_cal == 0 || n_cal == n {
        return Err(ConfotError::Data(format!(
            "ratio {cal_ratio} leaves an empty split for {n} samples"
        )));
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }

    let build = |idx: &[usize]| -> Result<LabeledSplit> {
        LabeledSplit::new(
            data.logits.select_columns(idx)?,
            idx.iter().map(|&i| data.labels[i]).collect(),
        )
    };
    Ok((build(&indices[..n_cal])?, build(&indices[n_cal..])?))
}

/// Calibrate on the calibration block of a probability matrix and construct
/// sets for the query block, with explicit tie-break values.
fn calibrate_and_build(
    cal_probs: &ProbabilityMatrix,
    cal_labels: &[usize],
    query_probs: &ProbabilityMatrix,
    kind: &ScoreKind,
    alpha: f64,
    u_cal: &[f64],
    u_query: &[f64],
) -> Result<Vec<PredictionSet>> {
    conformal_pipeline_with_u(cal_probs, cal_labels, query_probs, kind, alpha, u_cal, u_query)
}

fn threshold_from_codes(
    cal_codes: &ProbabilityMatrix,
    cal_labels: &[usize],
    kind: &ScoreKind,
    alpha: f64,
    u_cal: &[f64],
) -> Result<ConformalThreshold> {
    let mut scores = Vec::with_capacity(cal_labels.len());
    for (i, &y) in cal_labels.iter().enumerate() {
        let all = score_all_labels(cal_codes.column(i), u_cal[i], kind)?;
        scores.push(all[y]);
    }
    calibrate_threshold(&scores, alpha, *kind)
}

/// Query codes of every chunk concatenated back into test order, plus the
/// per-chunk calibration codes needed for recalibration.
struct ChunkedCodes {
    chunks: Vec<(ProbabilityMatrix, ProbabilityMatrix, usize)>, // (cal, query, offset)
}

fn transduce_in_chunks(
    cal: &LabeledSplit,
    test_logits: &SimilarityMatrix,
    batch_size: usize,
    transport: &TransportConfig,
) -> Result<ChunkedCodes> {
    let m = test_logits.num_samples();
    let mut chunks = Vec::new();
    let mut offset = 0;
    while offset < m {
        let end = (offset + batch_size).min(m);
        let idx: Vec<usize> = (offset..end).collect();
        let chunk_logits = test_logits.select_columns(&idx)?;
        let (cal_codes, query_codes, _) = conf_ot_transfer(cal, &chunk_logits, transport)?;
        chunks.push((cal_codes, query_codes, offset));
        offset = end;
    }
    Ok(ChunkedCodes { chunks })
}

/// Run every (method, score, alpha) combination for one trial seed.
///
/// `data` is the full labeled pool; the trial derives its own split and
/// tie-break sub-seeds from `trial_seed`.
pub fn run_trial(
    data: &LabeledSplit,
    config: &ExperimentConfig,
    trial_seed: u64,
) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let mut seeder = ChaCha8Rng::seed_from_u64(trial_seed);
    let split_seed: u64 = seeder.gen();
    let tie_seed: u64 = seeder.gen();

    let (cal, test) = split_cal_test(data, config.cal_ratio, split_seed)?;
    let n = cal.num_samples();
    let m = test.num_samples();
    let tie = TieBreaker::generate(n + m, tie_seed);
    let (u_cal, u_query) = tie.values().split_at(n);

    let mut records = Vec::new();
    for method in &config.methods {
        match method {
            Method::Base => {
                let cal_probs = softmax_columns(&cal.logits, 1.0)?;
                let query_probs = softmax_columns(&test.logits, 1.0)?;
                for kind in &config.scores {
                    for &alpha in &config.alphas {
                        let sets = calibrate_and_build(
                            &cal_probs,
                            &cal.labels,
                            &query_probs,
                            kind,
                            alpha,
                            u_cal,
                            u_query,
                        )?;
                        records.push(TrialRecord {
                            method: *method,
                            score: *kind,
                            alpha,
                            metrics: MetricsReport::compute(
                                &query_probs,
                                &sets,
                                &test.labels,
                                alpha,
                            )?,
                        });
                    }
                }
            }
            Method::ConfOt => {
                let effective_batch = config.query_batch_size.filter(|&b| b < m);
                match effective_batch {
                    None => {
                        let (cal_codes, query_codes, _) =
                            conf_ot_transfer(&cal, &test.logits, &config.transport)?;
                        for kind in &config.scores {
                            for &alpha in &config.alphas {
                                let sets = calibrate_and_build(
                                    &cal_codes,
                                    &cal.labels,
                                    &query_codes,
                                    kind,
                                    alpha,
                                    u_cal,
                                    u_query,
                                )?;
                                records.push(TrialRecord {
                                    method: *method,
                                    score: *kind,
                                    alpha,
                                    metrics: MetricsReport::compute(
                                        &query_codes,
                                        &sets,
                                        &test.labels,
                                        alpha,
                                    )?,
                                });
                            }
                        }
                    }
                    Some(batch) => {
                        let chunked =
                            transduce_in_chunks(&cal, &test.logits, batch, &config.transport)?;
                        // Stitch the chunk query codes back into test order
                        // for Top-1 scoring.
                        let views: Vec<_> = chunked
                            .chunks
                            .iter()
                            .map(|(_, q, _)| q.values().view())
                            .collect();
                        let stitched = ProbabilityMatrix::new(
                            ndarray::concatenate(Axis(1), &views)
                                .map_err(|e| ConfotError::Shape(e.to_string()))?,
                        )?;

                        let full_thresholds = if config.reuse_full_batch_threshold {
                            let (full_cal_codes, _, _) =
                                conf_ot_transfer(&cal, &test.logits, &config.transport)?;
                            Some(full_cal_codes)
                        } else {
                            None
                        };

                        for kind in &config.scores {
                            for &alpha in &config.alphas {
                                let mut sets: Vec<PredictionSet> = Vec::with_capacity(m);
                                let frozen = match &full_thresholds {
                                    Some(full_cal_codes) => Some(threshold_from_codes(
                                        full_cal_codes,
                                        &cal.labels,
                                        kind,
                                        alpha,
                                        u_cal,
                                    )?),
                                    None => None,
                                };
                                for (cal_codes, query_codes, offset) in &chunked.chunks {
                                    let u_chunk =
                                        &u_query[*offset..*offset + query_codes.num_samples()];
                                    match &frozen {
                                        None => {
                                            sets.extend(calibrate_and_build(
                                                cal_codes,
                                                &cal.labels,
                                                query_codes,
                                                kind,
                                                alpha,
                                                u_cal,
                                                u_chunk,
                                            )?);
                                        }
                                        Some(threshold) => {
                                            for (j, &u) in u_chunk.iter().enumerate() {
                                                let scores = score_all_labels(
                                                    query_codes.column(j),
                                                    u,
                                                    kind,
                                                )?;
                                                sets.push(build_prediction_set(
                                                    &scores, kind, threshold,
                                                )?);
                                            }
                                        }
                                    }
                                }
                                records.push(TrialRecord {
                                    method: *method,
                                    score: *kind,
                                    alpha,
                                    metrics: MetricsReport::compute(
                                        &stitched,
                                        &sets,
                                        &test.labels,
                                        alpha,
                                    )?,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(records)
}

/// Aggregate per-seed trial records into report rows, preserving the
/// (method, score, alpha) order of the config.
pub fn aggregate(config: &ExperimentConfig, trials: &[Vec<TrialRecord>]) -> AggregatedReport {
    let mut rows = Vec::new();
    for method in &config.methods {
        for score in &config.scores {
            for &alpha in &config.alphas {
                let mut per_seed = PerSeedMetrics::default();
                for trial in trials {
                    if let Some(record) = trial.iter().find(|r| {
                        r.method == *method && r.score == *score && r.alpha == alpha
                    }) {
                        per_seed.top1.push(record.metrics.top1);
                        per_seed.coverage.push(record.metrics.coverage);
                        per_seed.avg_size.push(record.metrics.avg_size);
                        per_seed.ccv.push(record.metrics.ccv);
                    }
                }
                if per_seed.top1.is_empty() {
                    continue;
                }
                let summary = SummaryStats {
                    top1_mean: mean(&per_seed.top1),
                    top1_std: std_dev(&per_seed.top1),
                    cov_mean: mean(&per_seed.coverage),
                    cov_std: std_dev(&per_seed.coverage),
                    size_mean: mean(&per_seed.avg_size),
                    size_std: std_dev(&per_seed.avg_size),
                    ccv_mean: mean(&per_seed.ccv),
                    ccv_std: std_dev(&per_seed.ccv),
                };
                rows.push(ReportRow {
                    method: *method,
                    score: *score,
                    alpha,
                    per_seed,
                    summary,
                });
            }
        }
    }

    // Paired per-seed size comparison when both methods are present.
    let mut paired = Vec::new();
    if config.methods.contains(&Method::Base) && config.methods.contains(&Method::ConfOt) {
        for score in &config.scores {
            for &alpha in &config.alphas {
                let find = |method: Method| {
                    rows.iter()
                        .find(|r| r.method == method && r.score == *score && r.alpha == alpha)
                };
                if let (Some(base), Some(confot)) = (find(Method::Base), find(Method::ConfOt)) {
                    let pairs: Vec<f64> = base
                        .per_seed
                        .avg_size
                        .iter()
                        .zip(&confot.per_seed.avg_size)
                        .filter(|(b, _)| **b > 0.0)
                        .map(|(b, c)| (b - c) / b)
                        .collect();
                    if !pairs.is_empty() {
                        paired.push(PairedSizeReduction {
                            score: *score,
                            alpha,
                            mean_relative_reduction: mean(&pairs),
                        });
                    }
                }
            }
        }
    }

    AggregatedReport {
        config: config.clone(),
        generated_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seeds: trials.len(),
        rows,
        paired_size_reduction: paired,
        failed: None,
    }
}

/// Run all trials for an already-loaded pool and aggregate the results.
pub fn run_experiment_on(data: &LabeledSplit, config: &ExperimentConfig) -> AggregatedReport {
    let outcomes: Vec<Result<Vec<TrialRecord>>> = (0..config.seeds)
        .into_par_iter()
        .map(|s| run_trial(data, config, config.base_seed + s as u64))
        .collect();

    let mut trials = Vec::new();
    let mut failure = None;
    for (s, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(records) => trials.push(records),
            Err(e) => {
                failure = Some(format!("trial seed {} failed: {e}", config.base_seed + s as u64));
                break;
            }
        }
    }
    let mut report = aggregate(config, &trials);
    report.failed = failure;
    report
}

/// Load the data named by the config, run every trial, aggregate, and write
/// the report. Partial results are flushed with a failure marker when a
/// trial errors.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregatedReport> {
    config.validate()?;
    let logits = load_logits(&config.logits_path)?;
    let labels = load_labels_csv(&config.labels_path)?;
    let data = LabeledSplit::new(logits, labels)?;

    let report = run_experiment_on(&data, config);
    write_report(&report, &config.output_path, config.output_format)?;
    match &report.failed {
        Some(msg) => Err(ConfotError::Data(format!(
            "experiment failed after {} completed seeds: {msg} (partial report written to {})",
            report.seeds,
            config.output_path.display()
        ))),
        None => Ok(report),
    }
}

/// Validate a logits/labels pair without running anything; returns
/// `(num_classes, num_samples)`.
pub fn validate_dataset(logits_path: &Path, labels_path: &Path) -> Result<(usize, usize)> {
    let logits = load_logits(logits_path)?;
    let labels = load_labels_csv(labels_path)?;
    let data = LabeledSplit::new(logits, labels)?;
    Ok((data.num_classes(), data.num_samples()))
}
