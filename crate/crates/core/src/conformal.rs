//! Split-conformal calibration and prediction-set construction.
//!
//! Calibration finds the order statistic
//! `s_hat = k-th smallest calibration score`, `k = ceil((N+1)(1-alpha))`,
//! which upper-bounds the score of a fresh exchangeable sample with
//! probability at least `1 - alpha`. When `k > N` no finite threshold
//! satisfies the quantile condition and `s_hat = +inf` (all labels admitted).
//! A query's prediction set is every label whose score falls within `s_hat`.

use serde::{Deserialize, Serialize};

use crate::error::{ConfotError, Result};
use crate::score::{score_all_labels, ScoreKind, TieBreaker};
use crate::types::ProbabilityMatrix;

/// The calibrated quantile threshold plus the settings it was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalThreshold {
    /// Calibrated quantile; `+inf` when the quantile index exceeds N.
    pub s_hat: f64,
    pub alpha: f64,
    pub kind: ScoreKind,
    pub n_calibration: usize,
}

/// A per-sample set of admitted class indices, sorted ascending.
///
/// May be empty: LAC legitimately produces empty sets when the threshold
/// falls below every label score, and those count as size 0 / non-covering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.binary_search(&label).is_ok()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(ConfotError::Parameter {
            name: "alpha",
            reason: format!("must lie strictly inside (0, 1), got {alpha}"),
        });
    }
    Ok(())
}

/// The conformal quantile index `k = ceil((N+1)(1-alpha))`, 1-based.
pub fn quantile_index(n_calibration: usize, alpha: f64) -> usize {
    ((n_calibration as f64 + 1.0) * (1.0 - alpha)).ceil() as usize
}

/// Calibrate the `1-alpha` score quantile from calibration scores.
pub fn calibrate_threshold(
    cal_scores: &[f64],
    alpha: f64,
    kind: ScoreKind,
) -> Result<ConformalThreshold> {
    check_alpha(alpha)?;
    kind.validate()?;
    if cal_scores.is_empty() {
        return Err(ConfotError::Data(
            "calibration requires at least one score".into(),
        ));
    }
    if let Some(&bad) = cal_scores.iter().find(|s| !s.is_finite()) {
        return Err(ConfotError::Data(format!(
            "calibration scores must be finite, got {bad}"
        )));
    }

    let n = cal_scores.len();
    let k = quantile_index(n, alpha);
    let s_hat = if k > n {
        f64::INFINITY
    } else {
        let mut sorted = cal_scores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[k - 1]
    };
    Ok(ConformalThreshold {
        s_hat,
        alpha,
        kind,
        n_calibration: n,
    })
}

/// Admit every label whose score falls within the calibrated threshold.
///
/// `kind` must match the score kind the threshold was calibrated under.
pub fn build_prediction_set(
    label_scores: &[f64],
    kind: &ScoreKind,
    threshold: &ConformalThreshold,
) -> Result<PredictionSet> {
    if *kind != threshold.kind {
        return Err(ConfotError::Contract(format!(
            "prediction set requested under {:?} but threshold was calibrated under {:?}",
            kind, threshold.kind
        )));
    }
    Ok(PredictionSet::new(
        label_scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= threshold.s_hat)
            .map(|(y, _)| y)
            .collect(),
    ))
}

/// The full split-conformal procedure over probability inputs, with the
/// tie-break values supplied explicitly: `u_cal[i]` scores calibration sample
/// `i` and `u_query[j]` scores every candidate label of query `j`.
pub fn conformal_pipeline_with_u(
    cal_probs: &ProbabilityMatrix,
    cal_labels: &[usize],
    query_probs: &ProbabilityMatrix,
    kind: &ScoreKind,
    alpha: f64,
    u_cal: &[f64],
    u_query: &[f64],
) -> Result<Vec<PredictionSet>> {
    if cal_probs.num_classes() != query_probs.num_classes() {
        return Err(ConfotError::Shape(format!(
            "calibration has {} classes, query has {}",
            cal_probs.num_classes(),
            query_probs.num_classes()
        )));
    }
    if cal_labels.len() != cal_probs.num_samples() {
        return Err(ConfotError::Shape(format!(
            "{} labels for {} calibration samples",
            cal_labels.len(),
            cal_probs.num_samples()
        )));
    }
    if u_cal.len() != cal_probs.num_samples() || u_query.len() != query_probs.num_samples() {
        return Err(ConfotError::Shape(
            "tie-break vectors must match the calibration and query sample counts".into(),
        ));
    }

    let mut cal_scores = Vec::with_capacity(cal_labels.len());
    for (i, &y) in cal_labels.iter().enumerate() {
        let all = score_all_labels(cal_probs.column(i), u_cal[i], kind)?;
        let score = *all.get(y).ok_or(ConfotError::Index {
            name: "label",
            value: y,
            limit: all.len(),
        })?;
        cal_scores.push(score);
    }
    let threshold = calibrate_threshold(&cal_scores, alpha, *kind)?;

    let mut sets = Vec::with_capacity(query_probs.num_samples());
    for (j, &u) in u_query.iter().enumerate() {
        let scores = score_all_labels(query_probs.column(j), u, kind)?;
        sets.push(build_prediction_set(&scores, kind, &threshold)?);
    }
    Ok(sets)
}

/// As [`conformal_pipeline_with_u`] but drawing one tie-break stream from
/// `seed`, covering calibration samples first and query samples after.
pub fn conformal_pipeline(
    cal_probs: &ProbabilityMatrix,
    cal_labels: &[usize],
    query_probs: &ProbabilityMatrix,
    kind: &ScoreKind,
    alpha: f64,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    let n = cal_probs.num_samples();
    let m = query_probs.num_samples();
    let tie = TieBreaker::generate(n + m, seed);
    conformal_pipeline_with_u(
        cal_probs,
        cal_labels,
        query_probs,
        kind,
        alpha,
        &tie.values()[..n],
        &tie.values()[n..],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Axis};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force threshold oracle: scan candidate thresholds ascending and
    /// return the first satisfying the empirical-CDF condition of the
    /// quantile definition.
    fn threshold_oracle(scores: &[f64], alpha: f64) -> f64 {
        let n = scores.len();
        let k = ((n as f64 + 1.0) * (1.0 - alpha)).ceil() as usize;
        let mut candidates = scores.to_vec();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &s in &candidates {
            let count = scores.iter().filter(|&&x| x <= s).count();
            if count >= k {
                return s;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = calibrate_threshold(&scores, 0.1, ScoreKind::Lac).unwrap();
        assert_eq!(t.s_hat, 1.0);
        assert_eq!(t.s_hat, threshold_oracle(&scores, 0.1));

        let t = calibrate_threshold(&[0.3, 0.1, 0.2], 0.5, ScoreKind::Lac).unwrap();
        assert_eq!(t.s_hat, 0.2);
        assert_eq!(t.s_hat, threshold_oracle(&[0.3, 0.1, 0.2], 0.5));

        // k = ceil(2 * 0.95) = 2 > N = 1 forces the +inf clamp.
        let t = calibrate_threshold(&[0.4], 0.05, ScoreKind::Lac).unwrap();
        assert!(t.s_hat.is_infinite());
    }

    #[test]
    fn threshold_rejects_bad_inputs() {
        assert!(matches!(
            calibrate_threshold(&[], 0.1, ScoreKind::Lac),
            Err(ConfotError::Data(_))
        ));
        assert!(matches!(
            calibrate_threshold(&[0.1], 0.0, ScoreKind::Lac),
            Err(ConfotError::Parameter { .. })
        ));
        assert!(matches!(
            calibrate_threshold(&[f64::NAN], 0.1, ScoreKind::Lac),
            Err(ConfotError::Data(_))
        ));
    }

    #[test]
    fn threshold_handles_duplicates_and_permutation() {
        let scores = [0.2, 0.2, 0.2, 0.5, 0.5];
        let t1 = calibrate_threshold(&scores, 0.4, ScoreKind::Lac).unwrap();
        let mut permuted = scores;
        permuted.reverse();
        let t2 = calibrate_threshold(&permuted, 0.4, ScoreKind::Lac).unwrap();
        assert_eq!(t1.s_hat, t2.s_hat);
        assert_eq!(t1.s_hat, threshold_oracle(&scores, 0.4));
    }

    #[test]
    fn set_construction_examples() {
        let t = ConformalThreshold {
            s_hat: 0.5,
            alpha: 0.1,
            kind: ScoreKind::Lac,
            n_calibration: 10,
        };
        let set = build_prediction_set(&[0.3, 0.7], &ScoreKind::Lac, &t).unwrap();
        assert_eq!(set.members(), &[0]);

        let t_inf = ConformalThreshold {
            s_hat: f64::INFINITY,
            ..t.clone()
        };
        let set = build_prediction_set(&[9.0, 2.0, 5.0], &ScoreKind::Lac, &t_inf).unwrap();
        assert_eq!(set.members(), &[0, 1, 2]);

        assert!(matches!(
            build_prediction_set(&[0.1], &ScoreKind::Aps, &t),
            Err(ConfotError::Contract(_))
        ));
    }

    #[test]
    fn set_matches_linear_filter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.gen_range(2..30);
            let scores: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
            let t = ConformalThreshold {
                s_hat: rng.gen::<f64>(),
                alpha: 0.1,
                kind: ScoreKind::Lac,
                n_calibration: 10,
            };
            let set = build_prediction_set(&scores, &ScoreKind::Lac, &t).unwrap();
            let oracle: Vec<usize> = (0..k).filter(|&y| scores[y] <= t.s_hat).collect();
            assert_eq!(set.members(), oracle.as_slice());
        }
    }

    fn one_hot_matrix(labels: &[usize], k: usize) -> ProbabilityMatrix {
        let mut m = Array2::zeros((k, labels.len()));
        for (i, &y) in labels.iter().enumerate() {
            m[[y, i]] = 1.0;
        }
        ProbabilityMatrix::new(m).unwrap()
    }

    #[test]
    fn pipeline_separable_case_has_full_coverage() {
        let cal_labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let query_labels: Vec<usize> = (0..10).map(|i| (i + 1) % 2).collect();
        let cal = one_hot_matrix(&cal_labels, 2);
        let query = one_hot_matrix(&query_labels, 2);
        let sets =
            conformal_pipeline(&cal, &cal_labels, &query, &ScoreKind::Lac, 0.1, 9).unwrap();
        let covered = sets
            .iter()
            .zip(&query_labels)
            .filter(|(s, &y)| s.contains(y))
            .count();
        assert_eq!(covered, query_labels.len());
    }

    #[test]
    fn pipeline_oracle_classifier_yields_argmax_singletons() {
        // All calibration LAC scores are exactly 0, so s_hat = 0 and each
        // query set is exactly the labels with probability 1.
        let cal_labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let query_labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let cal = one_hot_matrix(&cal_labels, 3);
        let query = one_hot_matrix(&query_labels, 3);
        let sets =
            conformal_pipeline(&cal, &cal_labels, &query, &ScoreKind::Lac, 0.2, 1).unwrap();
        for (s, &y) in sets.iter().zip(&query_labels) {
            assert_eq!(s.members(), &[y]);
        }
    }

    /// Independent end-to-end re-implementation of the three-step recipe,
    /// with its own score routine, used as the pipeline oracle.
    fn pipeline_oracle(
        cal: &ProbabilityMatrix,
        cal_labels: &[usize],
        query: &ProbabilityMatrix,
        alpha: f64,
        u: &[f64],
    ) -> Vec<Vec<usize>> {
        let n = cal.num_samples();
        let aps = |col: ndarray::ArrayView1<f64>, y: usize, u: f64| -> f64 {
            let mut rho = 0.0;
            for &v in col.iter() {
                if v > col[y] {
                    rho += v;
                }
            }
            rho + col[y] * u
        };
        let mut scores: Vec<f64> = (0..n)
            .map(|i| aps(cal.column(i), cal_labels[i], u[i]))
            .collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = ((n as f64 + 1.0) * (1.0 - alpha)).ceil() as usize;
        let s_hat = if k > n { f64::INFINITY } else { scores[k - 1] };
        (0..query.num_samples())
            .map(|j| {
                (0..query.num_classes())
                    .filter(|&y| aps(query.column(j), y, u[n + j]) <= s_hat)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pipeline_matches_independent_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let k = 3;
        let (n, m) = (20, 20);
        let random_probs = |rng: &mut ChaCha8Rng, cols: usize| {
            let mut a = Array2::zeros((k, cols));
            for mut col in a.axis_iter_mut(Axis(1)) {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                for (dst, r) in col.iter_mut().zip(&raw) {
                    *dst = r / s;
                }
            }
            ProbabilityMatrix::new(a).unwrap()
        };
        let cal = random_probs(&mut rng, n);
        let query = random_probs(&mut rng, m);
        let cal_labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();

        let seed = 77;
        let sets =
            conformal_pipeline(&cal, &cal_labels, &query, &ScoreKind::Aps, 0.2, seed).unwrap();
        let u = TieBreaker::generate(n + m, seed);
        let oracle = pipeline_oracle(&cal, &cal_labels, &query, 0.2, u.values());
        for (got, want) in sets.iter().zip(&oracle) {
            assert_eq!(got.members(), want.as_slice());
        }
    }

    proptest! {
        #[test]
        fn nestedness_in_alpha(scores in proptest::collection::vec(0.0_f64..1.0, 5..80),
                               a1 in 0.01_f64..0.5, a2 in 0.01_f64..0.5)
        {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let t_lo = calibrate_threshold(&scores, lo, ScoreKind::Lac).unwrap();
            let t_hi = calibrate_threshold(&scores, hi, ScoreKind::Lac).unwrap();
            prop_assert!(t_lo.s_hat >= t_hi.s_hat);

            // Sets under the larger alpha nest inside sets under the smaller.
            let label_scores: Vec<f64> = scores.iter().take(10).copied().collect();
            let s_lo = build_prediction_set(&label_scores, &ScoreKind::Lac, &t_lo).unwrap();
            let s_hi = build_prediction_set(&label_scores, &ScoreKind::Lac, &t_hi).unwrap();
            for y in s_hi.members() {
                prop_assert!(s_lo.contains(*y));
            }
        }

        #[test]
        fn threshold_is_order_statistic(scores in proptest::collection::vec(0.0_f64..1.0, 1..120),
                                        alpha in 0.01_f64..0.99)
        {
            let t = calibrate_threshold(&scores, alpha, ScoreKind::Lac).unwrap();
            let n = scores.len();
            let k = quantile_index(n, alpha);
            if k <= n {
                let mut sorted = scores.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                prop_assert_eq!(t.s_hat.to_bits(), sorted[k - 1].to_bits());
            } else {
                prop_assert!(t.s_hat.is_infinite());
            }
            prop_assert_eq!(t.s_hat, threshold_oracle(&scores, alpha));
        }
    }
}
