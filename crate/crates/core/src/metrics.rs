//! Evaluation metrics: pairwise and per-video offset errors against ground
//! truth, with AUC-style accuracy summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("video {0} missing from ground truth")]
    UnknownVideo(String),
    #[error("no errors to aggregate")]
    EmptyInput,
    #[error("prediction and truth do not share reference video {0}")]
    MissingReference(String),
}

/// A predicted pairwise offset, or a rejection that counts as a failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairPrediction {
    pub video_i: String,
    pub video_j: String,
    /// Predicted `s_j - s_i` in seconds; `None` for rejected pairs.
    pub offset_s: Option<f64>,
}

/// Per-pair absolute error in milliseconds; rejected pairs carry infinity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairError {
    pub video_i: String,
    pub video_j: String,
    pub error_ms: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair_errors: Vec<PairError>,
    pub a_at_100: f64,
    pub a_at_500: f64,
    pub video_errors_ms: BTreeMap<String, f64>,
    pub delta_mean_ms: f64,
    pub delta_med_ms: f64,
}

/// Absolute millisecond error of each predicted pairwise offset against the
/// ground-truth relative offsets. Rejected pairs are marked and carry an
/// infinite error so they count as failures at every threshold.
pub fn pairwise_errors(
    predictions: &[PairPrediction],
    truth_offsets: &BTreeMap<String, f64>,
) -> Result<Vec<PairError>, MetricsError> {
    predictions
        .iter()
        .map(|p| {
            let si = truth_offsets
                .get(&p.video_i)
                .ok_or_else(|| MetricsError::UnknownVideo(p.video_i.clone()))?;
            let sj = truth_offsets
                .get(&p.video_j)
                .ok_or_else(|| MetricsError::UnknownVideo(p.video_j.clone()))?;
            let (error_ms, rejected) = match p.offset_s {
                Some(d) => ((d - (sj - si)).abs() * 1000.0, false),
                None => (f64::INFINITY, true),
            };
            Ok(PairError {
                video_i: p.video_i.clone(),
                video_j: p.video_j.clone(),
                error_ms,
                rejected,
            })
        })
        .collect()
}

/// Area under the cumulative accuracy curve `acc(e) = fraction of errors <= e`
/// over `e in [0, tau_ms]`, normalized by `tau_ms` and scaled to a percentage.
///
/// Closed form: each error `e <= tau` contributes `(tau - e) / (n tau)`;
/// failures (infinite errors) contribute zero everywhere.
pub fn auc_at(errors_ms: &[f64], tau_ms: f64) -> Result<f64, MetricsError> {
    assert!(tau_ms > 0.0);
    if errors_ms.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = errors_ms.len() as f64;
    let area: f64 = errors_ms
        .iter()
        .map(|&e| if e <= tau_ms { (tau_ms - e) / tau_ms } else { 0.0 })
        .sum();
    Ok(100.0 * area / n)
}

/// Plain percent of errors at or below the threshold.
pub fn pct_at(errors_ms: &[f64], tau_ms: f64) -> Result<f64, MetricsError> {
    assert!(tau_ms > 0.0);
    if errors_ms.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hit = errors_ms.iter().filter(|&&e| e <= tau_ms).count();
    Ok(100.0 * hit as f64 / errors_ms.len() as f64)
}

/// Per-video absolute errors in milliseconds after aligning both gauges to
/// the shared reference video, plus mean and median over non-reference videos.
pub fn video_errors(
    predicted: &BTreeMap<String, f64>,
    truth: &BTreeMap<String, f64>,
    reference: &str,
) -> Result<(BTreeMap<String, f64>, f64, f64), MetricsError> {
    let pred_ref = predicted
        .get(reference)
        .ok_or_else(|| MetricsError::MissingReference(reference.to_string()))?;
    let truth_ref = truth
        .get(reference)
        .ok_or_else(|| MetricsError::MissingReference(reference.to_string()))?;
    let mut errors = BTreeMap::new();
    for (v, p) in predicted {
        let t = truth
            .get(v)
            .ok_or_else(|| MetricsError::UnknownVideo(v.clone()))?;
        errors.insert(v.clone(), ((p - pred_ref) - (t - truth_ref)).abs() * 1000.0);
    }
    let non_ref: Vec<f64> = errors
        .iter()
        .filter(|(v, _)| v.as_str() != reference)
        .map(|(_, e)| *e)
        .collect();
    if non_ref.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mean = non_ref.iter().sum::<f64>() / non_ref.len() as f64;
    Ok((errors, mean, median(&non_ref)))
}

/// Median of a non-empty slice; the mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn truth2() -> BTreeMap<String, f64> {
        BTreeMap::from([("a".to_string(), 0.0), ("b".to_string(), 1.95)])
    }

    #[test]
    fn pairwise_error_arithmetic() {
        let preds = vec![
            PairPrediction {
                video_i: "a".into(),
                video_j: "b".into(),
                offset_s: Some(2.0),
            },
            PairPrediction {
                video_i: "a".into(),
                video_j: "b".into(),
                offset_s: Some(1.95),
            },
            PairPrediction {
                video_i: "a".into(),
                video_j: "b".into(),
                offset_s: None,
            },
        ];
        let errs = pairwise_errors(&preds, &truth2()).unwrap();
        assert_relative_eq!(errs[0].error_ms, 50.0, epsilon = 1e-9);
        assert_eq!(errs[1].error_ms, 0.0);
        assert!(errs[2].rejected && errs[2].error_ms.is_infinite());
    }

    #[test]
    fn pairwise_unknown_video() {
        let preds = vec![PairPrediction {
            video_i: "a".into(),
            video_j: "zz".into(),
            offset_s: Some(0.0),
        }];
        assert!(matches!(
            pairwise_errors(&preds, &truth2()),
            Err(MetricsError::UnknownVideo(_))
        ));
    }

    #[test]
    fn auc_exact_cases() {
        assert_eq!(auc_at(&[0.0, 0.0, 0.0], 100.0).unwrap(), 100.0);
        // single error exactly at tau: the accuracy step sits at the right
        // endpoint, the integral over [0, tau) is zero
        assert_eq!(auc_at(&[100.0], 100.0).unwrap(), 0.0);
        assert_eq!(auc_at(&[0.0, f64::INFINITY], 100.0).unwrap(), 50.0);
        assert_eq!(auc_at(&[0.0, f64::INFINITY], 500.0).unwrap(), 50.0);
        // analytic middle case: error at tau/2 contributes half its weight
        assert_relative_eq!(auc_at(&[50.0], 100.0).unwrap(), 50.0);
        assert!(matches!(auc_at(&[], 100.0), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn auc_matches_quadrature_oracle() {
        // numerically integrate the step function acc(e) on [0, tau]
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = rng.gen_range(1..20);
            let errors: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        f64::INFINITY
                    } else {
                        rng.gen_range(0.0..300.0)
                    }
                })
                .collect();
            let tau = rng.gen_range(50.0..500.0);
            let steps = 100_000usize;
            let mut acc_sum = 0.0;
            for k in 0..steps {
                let e = tau * (k as f64 + 0.5) / steps as f64;
                let acc = errors.iter().filter(|&&x| x <= e).count() as f64 / n as f64;
                acc_sum += acc;
            }
            let numeric = 100.0 * acc_sum / steps as f64;
            let exact = auc_at(&errors, tau).unwrap();
            assert!((numeric - exact).abs() < 0.05, "{numeric} vs {exact}");
        }
    }

    #[test]
    fn auc_monotone_in_tau_and_permutation_invariant() {
        let errors = [10.0, 60.0, 200.0, f64::INFINITY];
        let mut last = 0.0;
        for tau in [10.0, 50.0, 100.0, 250.0, 1000.0] {
            let a = auc_at(&errors, tau).unwrap();
            assert!(a >= last - 1e-12);
            last = a;
        }
        let shuffled = [200.0, 10.0, f64::INFINITY, 60.0];
        assert_eq!(auc_at(&errors, 100.0).unwrap(), auc_at(&shuffled, 100.0).unwrap());
    }

    #[test]
    fn video_error_gauge_invariance_and_arithmetic() {
        let truth = BTreeMap::from([
            ("r".to_string(), 0.3),
            ("x".to_string(), 1.0),
            ("y".to_string(), -0.5),
        ]);
        // prediction = truth + constant -> all zero errors
        let pred: BTreeMap<String, f64> =
            truth.iter().map(|(k, v)| (k.clone(), v + 7.7)).collect();
        let (errs, mean, med) = video_errors(&pred, &truth, "r").unwrap();
        assert!(errs.values().all(|e| e.abs() < 1e-9));
        assert!(mean < 1e-9 && med < 1e-9);

        // hand-computed errors {10, 60, 200} ms
        let truth = BTreeMap::from([
            ("r".to_string(), 0.0),
            ("a".to_string(), 0.0),
            ("b".to_string(), 0.0),
            ("c".to_string(), 0.0),
        ]);
        let pred = BTreeMap::from([
            ("r".to_string(), 0.0),
            ("a".to_string(), 0.010),
            ("b".to_string(), 0.060),
            ("c".to_string(), 0.200),
        ]);
        let (_, mean, med) = video_errors(&pred, &truth, "r").unwrap();
        assert_relative_eq!(mean, 90.0, epsilon = 1e-9);
        assert_relative_eq!(med, 60.0, epsilon = 1e-9);
    }

    #[test]
    fn video_error_missing_reference() {
        let truth = BTreeMap::from([("a".to_string(), 0.0)]);
        let pred = BTreeMap::from([("a".to_string(), 0.0)]);
        assert!(matches!(
            video_errors(&pred, &truth, "zz"),
            Err(MetricsError::MissingReference(_))
        ));
    }

    #[test]
    fn pct_fallback() {
        let errors = [10.0, 60.0, 200.0, f64::INFINITY];
        assert_eq!(pct_at(&errors, 100.0).unwrap(), 50.0);
        assert_eq!(pct_at(&errors, 200.0).unwrap(), 75.0);
    }
}
