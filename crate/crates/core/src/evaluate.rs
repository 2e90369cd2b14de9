//! Detection precision/recall/center error and position error statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::greedy_pairs;

pub const PIXEL_THRESHOLDS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];
pub const AUC_THRESHOLDS_KM: [f64; 4] = [0.1, 0.3, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold_px: f64,
    /// Absent when there are no detections.
    pub precision: Option<f64>,
    /// Absent when there are no catalog craters.
    pub recall: Option<f64>,
    /// Mean matched distance; absent when nothing matched.
    pub center_error: Option<f64>,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub n_detections: usize,
    pub n_catalog: usize,
    pub per_threshold: Vec<ThresholdMetrics>,
}

impl DetectionMetrics {
    pub fn at(&self, threshold_px: f64) -> Option<&ThresholdMetrics> {
        self.per_threshold.iter().find(|t| t.threshold_px == threshold_px)
    }
}

/// Greedy one-to-one matching of detections to catalog centers per
/// threshold.
pub fn detection_metrics(detections: &[[f64; 2]], catalog: &[[f64; 2]], thresholds: &[f64]) -> DetectionMetrics {
    let per_threshold = thresholds
        .iter()
        .map(|&t| {
            let pairs = greedy_pairs(detections, catalog, t);
            let correct = pairs.len();
            ThresholdMetrics {
                threshold_px: t,
                precision: (!detections.is_empty()).then(|| correct as f64 / detections.len() as f64),
                recall: (!catalog.is_empty()).then(|| correct as f64 / catalog.len() as f64),
                center_error: (correct > 0).then(|| pairs.iter().map(|p| p.2).sum::<f64>() / correct as f64),
                correct,
            }
        })
        .collect();
    DetectionMetrics {
        n_detections: detections.len(),
        n_catalog: catalog.len(),
        per_threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEntry {
    pub threshold_km: f64,
    pub auc_percent: f64,
}

/// Normalized area under the empirical error CDF up to each threshold, in
/// percent. `None` marks a failed image (infinite error).
pub fn position_auc(errors: &[Option<f64>], thresholds: &[f64]) -> Result<Vec<AucEntry>> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no position errors to integrate".into()));
    }
    if let Some(bad) = errors.iter().flatten().find(|e| !(**e >= 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid position error {bad}")));
    }
    let mut finite: Vec<f64> = errors.iter().flatten().copied().collect();
    finite.sort_by(|a, b| a.partial_cmp(b).expect("validated"));
    let n = errors.len() as f64;
    thresholds
        .iter()
        .map(|&tau| {
            if !(tau > 0.0) {
                return Err(Error::InvalidArgument(format!("AUC threshold {tau} must be positive")));
            }
            // each image contributes the length of [e_i, tau) where the CDF includes it
            let area = finite.iter().take_while(|&&e| e < tau).fold(0.0, |acc, e| acc + (tau - e));
            Ok(AucEntry {
                threshold_km: tau,
                auc_percent: 100.0 * area / (n * tau),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionMetrics {
    pub n_images: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub mean_km: Option<f64>,
    /// Population standard deviation over successes.
    pub std_km: Option<f64>,
    pub min_km: Option<f64>,
    pub max_km: Option<f64>,
    pub auc: Vec<AucEntry>,
}

pub fn position_metrics(errors: &[Option<f64>], thresholds: &[f64]) -> Result<PositionMetrics> {
    let auc = position_auc(errors, thresholds)?;
    let ok: Vec<f64> = errors.iter().flatten().copied().collect();
    let k = ok.len();
    let mean = (k > 0).then(|| ok.iter().sum::<f64>() / k as f64);
    Ok(PositionMetrics {
        n_images: errors.len(),
        n_success: k,
        success_rate: k as f64 / errors.len() as f64,
        mean_km: mean,
        std_km: mean.map(|m| (ok.iter().map(|e| (e - m).powi(2)).sum::<f64>() / k as f64).sqrt()),
        min_km: ok.iter().copied().reduce(f64::min),
        max_km: ok.iter().copied().reduce(f64::max),
        auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateThreshold {
    pub threshold_px: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub center_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDetection {
    pub n_images: usize,
    pub per_threshold: Vec<AggregateThreshold>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Unweighted mean over images of each defined per-image value.
pub fn aggregate_detection(per_image: &[DetectionMetrics]) -> Result<AggregateDetection> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to aggregate".into()))?;
    let per_threshold = first
        .per_threshold
        .iter()
        .map(|t| {
            let pick = |f: fn(&ThresholdMetrics) -> Option<f64>| {
                mean_of(per_image.iter().map(|m| m.at(t.threshold_px).and_then(f)))
            };
            AggregateThreshold {
                threshold_px: t.threshold_px,
                precision: pick(|m| m.precision),
                recall: pick(|m| m.recall),
                center_error: pick(|m| m.center_error),
            }
        })
        .collect();
    Ok(AggregateDetection {
        n_images: per_image.len(),
        per_threshold,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Plain-text table with one row per pixel threshold and a position summary.
pub fn format_report(detection: &AggregateDetection, position: Option<&PositionMetrics>) -> String {
    let mut s = format!("images: {}\n", detection.n_images);
    s.push_str(&format!("{:>6} {:>10} {:>10} {:>10}\n", "px", "P (%)", "R (%)", "CE (px)"));
    for t in &detection.per_threshold {
        s.push_str(&format!(
            "{:>6} {:>10} {:>10} {:>10}\n",
            t.threshold_px,
            pct(t.precision),
            pct(t.recall),
            t.center_error.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
        ));
    }
    if let Some(p) = position {
        let km = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        s.push_str(&format!(
            "SR {:.1}%  mean {}  std {}  min {}  max {} km\n",
            100.0 * p.success_rate,
            km(p.mean_km),
            km(p.std_km),
            km(p.min_km),
            km(p.max_km)
        ));
        for a in &p.auc {
            s.push_str(&format!("AUC@{} km {:.2}%\n", a.threshold_km, a.auc_percent));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_detections() {
        let pts = [[1.0, 2.0], [30.0, 40.0], [100.0, 5.0]];
        let m = detection_metrics(&pts, &pts, &PIXEL_THRESHOLDS);
        for t in &m.per_threshold {
            assert_eq!((t.precision, t.recall, t.center_error), (Some(1.0), Some(1.0), Some(0.0)));
        }
    }

    #[test]
    fn threshold_bracketing() {
        let m = detection_metrics(&[[2.0, 0.0]], &[[0.0, 0.0]], &PIXEL_THRESHOLDS);
        assert_eq!(m.at(1.0).unwrap().correct, 0);
        assert_eq!(m.at(1.0).unwrap().center_error, None);
        for t in [3.0, 5.0, 10.0] {
            assert_eq!(m.at(t).unwrap().precision, Some(1.0));
            assert_eq!(m.at(t).unwrap().center_error, Some(2.0));
        }
        let empty = detection_metrics(&[], &[[0.0, 0.0]], &PIXEL_THRESHOLDS);
        assert!(empty.per_threshold.iter().all(|t| t.precision.is_none() && t.recall == Some(0.0)));
    }

    #[test]
    fn one_to_one_matching() {
        let m = detection_metrics(&[[0.0, 0.0], [0.5, 0.0]], &[[0.2, 0.0]], &[3.0]);
        assert_eq!(m.per_threshold[0].correct, 1);
        assert_eq!(m.per_threshold[0].precision, Some(0.5));
    }

    #[test]
    fn auc_hand_integration() {
        let a = position_auc(&[Some(0.05), Some(0.15), None], &[0.3]).unwrap();
        // (1/0.3) * (0.1/3 + 0.15*2/3) / 1 as percent
        let expect = 100.0 / 0.3 * (0.1 / 3.0 + 0.15 * 2.0 / 3.0);
        assert!((a[0].auc_percent - expect).abs() < 1e-9);
        assert!((a[0].auc_percent - 44.444444444444).abs() < 1e-9);
        let fail = position_auc(&[None, None], &AUC_THRESHOLDS_KM).unwrap();
        assert!(fail.iter().all(|e| e.auc_percent == 0.0));
        let zero = position_auc(&[Some(0.0)], &AUC_THRESHOLDS_KM).unwrap();
        assert!(zero.iter().all(|e| e.auc_percent == 100.0));
        assert!(position_auc(&[], &[0.1]).is_err());
        assert!(position_auc(&[Some(0.1)], &[0.0]).is_err());
    }

    #[test]
    fn auc_matches_dense_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errors: Vec<Option<f64>> = (0..25)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0.0..1.2)))
            .collect();
        for tau in AUC_THRESHOLDS_KM {
            let steps = 1_000_000;
            let h = tau / steps as f64;
            let mut area = 0.0;
            for k in 0..steps {
                let x = (k as f64 + 0.5) * h;
                area += errors.iter().flatten().filter(|&&e| e <= x).count() as f64;
            }
            let dense = 100.0 * area * h / (errors.len() as f64 * tau);
            let exact = position_auc(&errors, &[tau]).unwrap()[0].auc_percent;
            assert!((dense - exact).abs() < 1e-6 * 100.0, "{dense} vs {exact}");
        }
    }

    #[test]
    fn failures_lower_auc() {
        let base = [Some(0.05), Some(0.2)];
        let with_fail = [Some(0.05), Some(0.2), None];
        for tau in AUC_THRESHOLDS_KM {
            let a = position_auc(&base, &[tau]).unwrap()[0].auc_percent;
            let b = position_auc(&with_fail, &[tau]).unwrap()[0].auc_percent;
            assert!(b < a);
        }
    }

    #[test]
    fn all_failures_give_positive_zero() {
        let auc = position_auc(&[None, None], &AUC_THRESHOLDS_KM).unwrap();
        assert!(auc.iter().all(|a| a.auc_percent == 0.0 && a.auc_percent.is_sign_positive()));
    }

    #[test]
    fn aggregation() {
        let a = detection_metrics(&[[0.0, 0.0], [9.0, 9.0]], &[[0.0, 0.0], [50.0, 50.0]], &[3.0]);
        let b = detection_metrics(&[[0.0, 0.0]], &[[0.0, 0.0]], &[3.0]);
        let agg = aggregate_detection(&[a.clone(), b]).unwrap();
        assert_eq!(agg.per_threshold[0].precision, Some(0.75));
        let same = aggregate_detection(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.per_threshold[0].precision, a.per_threshold[0].precision);
        assert!(aggregate_detection(&[]).is_err());
        let p = position_metrics(&[Some(0.1), Some(0.3), None, Some(0.2)], &AUC_THRESHOLDS_KM).unwrap();
        assert_eq!(p.success_rate, 0.75);
        assert!((p.mean_km.unwrap() - 0.2).abs() < 1e-12);
        assert!(p.min_km.unwrap() <= p.mean_km.unwrap() && p.mean_km.unwrap() <= p.max_km.unwrap());
        let text = format_report(&agg, Some(&p));
        assert!(text.contains("AUC@0.1 km"));
    }
}
