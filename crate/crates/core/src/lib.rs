//! Conformal prediction sets for black-box classifier logits, with an
//! optional transductive optimal-transport transfer step.
//!
//! The library covers the full pipeline:
//!
//! 1. [`types`] — class-major logit/probability containers and softmax.
//! 2. [`score`] — LAC, APS, and RAPS non-conformity scores.
//! 3. [`conformal`] — quantile calibration and prediction-set construction.
//! 4. [`transport`] — Sinkhorn renormalization of the joint
//!    calibration + query similarity matrix into soft codes that feed the
//!    conformal step (the transductive transfer).
//! 5. [`metrics`] — coverage, set size, class-conditional coverage
//!    violation, Top-1 accuracy.
//! 6. [`io`] — binary logit files, label CSVs, report serialization.
//! 7. [`harness`] — seeded split/trial/experiment orchestration.
//! 8. [`synth`] — synthetic dataset generators for tests and demos.
//!
//! ```
//! use confot_core::synth::{generate, ShiftKind, SynthConfig};
//! use confot_core::transport::{conf_ot_pipeline, TransportConfig};
//! use confot_core::score::ScoreKind;
//!
//! let data = generate(&SynthConfig {
//!     num_classes: 5,
//!     cal_size: 100,
//!     test_size: 50,
//!     shift: ShiftKind::None,
//!     seed: 0,
//! })
//! .unwrap();
//! let sets = conf_ot_pipeline(
//!     &data.cal,
//!     &data.test.logits,
//!     &TransportConfig::default(),
//!     &ScoreKind::Lac,
//!     0.1,
//!     0,
//! )
//! .unwrap();
//! assert_eq!(sets.len(), 50);
//! ```

pub mod conformal;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod score;
pub mod synth;
pub mod transport;
pub mod types;

pub use conformal::{
    build_prediction_set, calibrate_threshold, conformal_pipeline, ConformalThreshold,
    PredictionSet,
};
pub use error::{ConfotError, Result};
pub use harness::{run_experiment, split_cal_test, ExperimentConfig, Method};
pub use metrics::MetricsReport;
pub use score::{ScoreKind, TieBreaker};
pub use transport::{conf_ot_pipeline, sinkhorn_codes, LabelPrior, TransportConfig, TransportPlan};
pub use types::{
    argmax_class, softmax_columns, ClassMarginal, LabeledSplit, ProbabilityMatrix,
    SimilarityMatrix,
};
