//! Synthetic data generators for the acceptance suite and the `gen-synth`
//! CLI command.
//!
//! Each sample draws a true class from a prior and a logit column from a
//! Gaussian class-conditional model: the true class's logit is elevated by a
//! fixed separation, every entry carries unit Gaussian noise. Calibration and
//! test samples come from one exchangeable stream.
//!
//! Shifts:
//! - `none`: uniform class prior; logits reflect it.
//! - `prior`: labels drawn from a skewed (geometric) prior shared by
//!   calibration and test, while the logits keep the symmetric structure of a
//!   model that never saw that skew. A transfer step that injects the
//!   observed label marginal can therefore sharpen the scores.
//! - `temperature`: uniform prior, but logits scaled down by a constant, as
//!   from an underconfident upstream model.
//!
//! The constants below are deliberately fixed so generated datasets are fully
//! determined by `(shape, shift, seed)`.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfotError, Result};
use crate::types::{LabeledSplit, SimilarityMatrix};

/// Logit elevation of the true class over the background.
pub const CLASS_SEPARATION: f64 = 2.0;
/// Geometric decay of the skewed prior: class k has weight DECAY^k.
pub const PRIOR_DECAY: f64 = 0.65;
/// Scale applied to logits under the temperature shift.
pub const TEMPERATURE_SHIFT_SCALE: f64 = 1.0 / 3.0;

/// Distribution shift applied to the generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    None,
    Prior,
    Temperature,
}

/// Shape and seed of one synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub cal_size: usize,
    pub test_size: usize,
    pub shift: ShiftKind,
    pub seed: u64,
}

/// Calibration and test halves of one generated dataset.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub cal: LabeledSplit,
    pub test: LabeledSplit,
}

impl SynthData {
    /// All samples as one split, calibration first; the harness re-splits.
    pub fn combined(&self) -> Result<LabeledSplit> {
        let logits =
            crate::transport::assemble_joint_matrix(&self.cal.logits, &self.test.logits)?;
        let mut labels = self.cal.labels.clone();
        labels.extend_from_slice(&self.test.labels);
        LabeledSplit::new(logits, labels)
    }
}

fn class_prior(num_classes: usize, shift: ShiftKind) -> Vec<f64> {
    match shift {
        ShiftKind::None | ShiftKind::Temperature => {
            vec![1.0 / num_classes as f64; num_classes]
        }
        ShiftKind::Prior => {
            let raw: Vec<f64> = (0..num_classes).map(|k| PRIOR_DECAY.powi(k as i32)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        }
    }
}

fn sample_class(prior: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut t: f64 = rng.gen();
    for (k, &w) in prior.iter().enumerate() {
        t -= w;
        if t < 0.0 {
            return k;
        }
    }
    prior.len() - 1
}

/// Generate one exchangeable dataset.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    if config.num_classes < 2 {
        return Err(ConfotError::Parameter {
            name: "num_classes",
            reason: format!("need at least 2 classes, got {}", config.num_classes),
        });
    }
    if config.cal_size == 0 || config.test_size == 0 {
        return Err(ConfotError::Parameter {
            name: "cal_size/test_size",
            reason: "both halves must be nonempty".into(),
        });
    }

    let k = config.num_classes;
    let total = config.cal_size + config.test_size;
    let prior = class_prior(k, config.shift);
    let scale = match config.shift {
        ShiftKind::Temperature => TEMPERATURE_SHIFT_SCALE,
        _ => 1.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels = Vec::with_capacity(total);
    let mut logits = Array2::<f64>::zeros((k, total));
    for i in 0..total {
        let y = sample_class(&prior, &mut rng);
        labels.push(y);
        for kk in 0..k {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if kk == y { CLASS_SEPARATION } else { 0.0 };
            logits[[kk, i]] = scale * (mean + noise);
        }
    }

    let matrix = SimilarityMatrix::new(logits)?;
    let cal_idx: Vec<usize> = (0..config.cal_size).collect();
    let test_idx: Vec<usize> = (config.cal_size..total).collect();
    let cal = LabeledSplit::new(
        matrix.select_columns(&cal_idx)?,
        labels[..config.cal_size].to_vec(),
    )?;
    let test = LabeledSplit::new(
        matrix.select_columns(&test_idx)?,
        labels[config.cal_size..].to_vec(),
    )?;
    Ok(SynthData { cal, test })
}
