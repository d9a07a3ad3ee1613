//! Shared numeric containers and probability transforms.
//!
//! Matrices are stored class-major: shape `(K, n)` where row `k` holds the
//! logits (or probabilities) of class `k` across all `n` samples. This is the
//! orientation the Sinkhorn row/column scalings operate on; sample-major files
//! are transposed at load time. All arithmetic is `f64` regardless of the
//! on-disk precision, because ratio iterations amplify `f32` rounding.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{ConfotError, Result};

/// Column-stochasticity tolerance used by the probability containers.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-9;

/// A `K x n` matrix of class-by-sample logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    /// Wrap a class-major `(K, n)` matrix of finite logits; requires `K >= 2`
    /// and `n >= 1`. The matrix is stored in standard (row-major) layout so
    /// hot loops can take contiguous row slices.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (k, n) = values.dim();
        if k < 2 {
            return Err(ConfotError::Shape(format!(
                "similarity matrix needs at least 2 classes, got {k}"
            )));
        }
        if n < 1 {
            return Err(ConfotError::Shape(
                "similarity matrix needs at least 1 sample".into(),
            ));
        }
        Self::check_finite(&values)?;
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Self { values })
    }

    /// A matrix with zero sample columns, used as the degenerate query side of
    /// a transduction. Only this constructor admits `n = 0`.
    pub fn empty_query(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(ConfotError::Shape(format!(
                "similarity matrix needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            values: Array2::zeros((num_classes, 0)),
        })
    }

    fn check_finite(values: &Array2<f64>) -> Result<()> {
        if let Some(((k, i), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ConfotError::Data(format!(
                "non-finite logit {v} at class {k}, sample {i}"
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Logits of sample `i` across all classes.
    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }

    /// A new matrix holding the given sample columns, order preserved.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.num_samples() {
                return Err(ConfotError::Index {
                    name: "sample",
                    value: i,
                    limit: self.num_samples(),
                });
            }
        }
        Ok(Self {
            values: self.values.select(Axis(1), indices),
        })
    }
}

/// A `K x n` matrix of per-sample class probabilities; every column sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    values: Array2<f64>,
}

impl ProbabilityMatrix {
    /// Validate entries in `[0, 1]` and column sums within
    /// [`COLUMN_SUM_TOLERANCE`] of 1. Zero columns are allowed (vacuous).
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((k, i), v)) = values
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(ConfotError::Data(format!(
                "probability {v} at class {k}, sample {i} outside [0, 1]"
            )));
        }
        for (i, col) in values.axis_iter(Axis(1)).enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(ConfotError::Data(format!(
                    "column {i} sums to {s}, expected 1 within {COLUMN_SUM_TOLERANCE}"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn num_classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Probability column of sample `i`.
    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }
}

/// A length-`K` probability distribution over classes. Houses both the
/// label-marginal prior and, reused at length `n`, the sample marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMarginal {
    weights: Array1<f64>,
}

impl ClassMarginal {
    /// Nonnegative weights summing to 1 within [`COLUMN_SUM_TOLERANCE`].
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if let Some((k, w)) = weights
            .indexed_iter()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(ConfotError::Data(format!(
                "marginal weight {w} at index {k} is negative or non-finite"
            )));
        }
        let s: f64 = weights.sum();
        if (s - 1.0).abs() > COLUMN_SUM_TOLERANCE {
            return Err(ConfotError::Data(format!(
                "marginal weights sum to {s}, expected 1 within {COLUMN_SUM_TOLERANCE}"
            )));
        }
        Ok(Self { weights })
    }

    /// The uniform distribution over `len` entries.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(ConfotError::Data("uniform marginal needs len >= 1".into()));
        }
        Ok(Self {
            weights: Array1::from_elem(len, 1.0 / len as f64),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// Indices with exactly zero weight.
    pub fn zero_entries(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w == 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Logits paired with ground-truth class labels.
///
/// Calibration data always carries labels; test data uses the same type with
/// labels withheld at inference and retained for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub logits: SimilarityMatrix,
    pub labels: Vec<usize>,
}

impl LabeledSplit {
    pub fn new(logits: SimilarityMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != logits.num_samples() {
            return Err(ConfotError::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                logits.num_samples()
            )));
        }
        let k = logits.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(ConfotError::Index {
                name: "label",
                value: bad,
                limit: k,
            });
        }
        Ok(Self { logits, labels })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.num_classes()
    }
}

/// Column-wise temperature-scaled softmax.
///
/// Column `j` of the output is `exp(l_j / t) / sum_k exp(l_kj / t)`, computed
/// with each column's maximum subtracted before exponentiation.
pub fn softmax_columns(logits: &SimilarityMatrix, temperature: f64) -> Result<ProbabilityMatrix> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(ConfotError::Parameter {
            name: "temperature",
            reason: format!("must be a positive finite real, got {temperature}"),
        });
    }
    let mut out = logits.values().clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let max = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / temperature;
        col.mapv_inplace(|x| (x / temperature - max).exp());
        let s: f64 = col.sum();
        col.mapv_inplace(|x| x / s);
    }
    ProbabilityMatrix::new(out)
}

/// Per-column argmax; ties break toward the lowest class index.
pub fn argmax_class(probs: &ProbabilityMatrix) -> Vec<usize> {
    probs.values().axis_iter(Axis(1)).map(argmax_column).collect()
}

fn argmax_column(col: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, &v) in col.iter().enumerate() {
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}
