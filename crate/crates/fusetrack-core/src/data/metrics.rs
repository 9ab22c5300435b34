//! One-pass evaluation metrics: success AUC over IoU thresholds,
//! precision at a pixel threshold, normalized precision AUC, and the
//! per-sequence average-overlap family.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("empty input list")]
    Empty,
}

/// Mean over the 21 thresholds t in {0, 0.05, ..., 1.0} of the fraction
/// of frames with IoU >= t.
pub fn success_auc(ious: &[f64]) -> Result<f64, MetricError> {
    if ious.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut acc = 0.0;
    for k in 0..=20 {
        let t = k as f64 * 0.05;
        let hits = ious.iter().filter(|&&v| v >= t).count();
        acc += hits as f64 / ious.len() as f64;
    }
    Ok(acc / 21.0)
}

/// Fraction of frames with center error <= threshold (20 px by default).
pub fn precision(center_errors: &[f64], threshold: f64) -> Result<f64, MetricError> {
    if center_errors.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = center_errors.iter().filter(|&&e| e <= threshold).count();
    Ok(hits as f64 / center_errors.len() as f64)
}

/// Center error with each axis scaled by the ground-truth box size, so a
/// unit error means "one box width/height off".
pub fn normalized_center_error(dx: f64, dy: f64, gt_w: f64, gt_h: f64) -> f64 {
    ((dx / gt_w).powi(2) + (dy / gt_h).powi(2)).sqrt()
}

/// AUC over the 51 thresholds {0, 0.01, ..., 0.5} of the fraction of
/// frames with normalized center error <= t.
pub fn normalized_precision(norm_errors: &[f64]) -> Result<f64, MetricError> {
    if norm_errors.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut acc = 0.0;
    for k in 0..=50 {
        let t = k as f64 * 0.01;
        let hits = norm_errors.iter().filter(|&&e| e <= t).count();
        acc += hits as f64 / norm_errors.len() as f64;
    }
    Ok(acc / 51.0)
}

/// GOT-style summary: mean average overlap plus mean success rates at
/// IoU > 0.5 and IoU > 0.75 (strict).
pub fn average_overlap(per_seq_ious: &[Vec<f64>]) -> Result<(f64, f64, f64), MetricError> {
    if per_seq_ious.is_empty() || per_seq_ious.iter().any(|s| s.is_empty()) {
        return Err(MetricError::Empty);
    }
    let n = per_seq_ious.len() as f64;
    let mut mao = 0.0;
    let mut sr50 = 0.0;
    let mut sr75 = 0.0;
    for seq in per_seq_ious {
        let len = seq.len() as f64;
        mao += seq.iter().sum::<f64>() / len / n;
        sr50 += seq.iter().filter(|&&v| v > 0.5).count() as f64 / len / n;
        sr75 += seq.iter().filter(|&&v| v > 0.75).count() as f64 / len / n;
    }
    Ok((mao, sr50, sr75))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceScores {
    pub name: String,
    pub suc: f64,
    pub pre: f64,
    pub npre: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub suc: f64,
    pub pre: f64,
    pub npre: f64,
    pub mao: f64,
    pub msr50: f64,
    pub msr75: f64,
    pub per_sequence: Vec<SequenceScores>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn success_hand_values() {
        assert!((success_auc(&[1.0; 5]).unwrap() - 1.0).abs() < 1e-12);
        // all 0.5: thresholds 0..=0.5 succeed, 11 of 21
        assert!((success_auc(&[0.5; 7]).unwrap() - 11.0 / 21.0).abs() < 1e-12);
        // all 0: only t=0 succeeds
        assert!((success_auc(&[0.0; 3]).unwrap() - 1.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn precision_hand_values() {
        assert_eq!(precision(&[0.0, 5.0, 20.0], 20.0).unwrap(), 1.0);
        assert_eq!(precision(&[21.0, 30.0], 20.0).unwrap(), 0.0);
        assert_eq!(precision(&[10.0, 25.0], 20.0).unwrap(), 0.5);
    }

    #[test]
    fn normalized_precision_extremes() {
        assert!((normalized_precision(&[0.0; 4]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalized_precision(&[0.6; 4]).unwrap(), 0.0);
    }

    #[test]
    fn empty_lists_rejected() {
        assert!(success_auc(&[]).is_err());
        assert!(precision(&[], 20.0).is_err());
        assert!(normalized_precision(&[]).is_err());
        assert!(average_overlap(&[]).is_err());
        assert!(average_overlap(&[vec![]]).is_err());
    }

    #[test]
    fn average_overlap_threshold_sides() {
        let (mao, sr50, sr75) = average_overlap(&[vec![0.6; 10]]).unwrap();
        assert!((mao - 0.6).abs() < 1e-12);
        assert_eq!((sr50, sr75), (1.0, 0.0));
        let perfect = average_overlap(&[vec![1.0; 3], vec![1.0; 5]]).unwrap();
        assert_eq!(perfect, (1.0, 1.0, 1.0));
    }

    #[test]
    fn average_overlap_hand_case() {
        let (mao, sr50, sr75) = average_overlap(&[vec![0.2, 0.8], vec![0.9, 0.9]]).unwrap();
        assert!((mao - (0.5 + 0.9) / 2.0).abs() < 1e-12);
        assert!((sr50 - (0.5 + 1.0) / 2.0).abs() < 1e-12);
        assert!((sr75 - (0.5 + 1.0) / 2.0).abs() < 1e-12);
    }

    // independent brute-force versions, written as direct loops over an
    // explicit threshold list
    fn brute_success(ious: &[f64]) -> f64 {
        let thresholds: Vec<f64> = (0..21).map(|k| k as f64 / 20.0).collect();
        thresholds
            .iter()
            .map(|t| ious.iter().filter(|&&v| v >= *t).count() as f64 / ious.len() as f64)
            .sum::<f64>()
            / 21.0
    }

    fn brute_npre(errs: &[f64]) -> f64 {
        let thresholds: Vec<f64> = (0..51).map(|k| k as f64 / 100.0).collect();
        thresholds
            .iter()
            .map(|t| errs.iter().filter(|&&e| e <= *t).count() as f64 / errs.len() as f64)
            .sum::<f64>()
            / 51.0
    }

    #[test]
    fn matches_brute_force_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.gen_range(1..=50);
            let ious: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let errs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.7)).collect();
            assert_eq!(success_auc(&ious).unwrap(), brute_success(&ious));
            assert_eq!(normalized_precision(&errs).unwrap(), brute_npre(&errs));
            let px: Vec<f64> = errs.iter().map(|e| e * 50.0).collect();
            let brute_pre =
                px.iter().filter(|&&e| e <= 20.0).count() as f64 / px.len() as f64;
            assert_eq!(precision(&px, 20.0).unwrap(), brute_pre);
        }
    }

    #[test]
    fn metrics_bounded_and_success_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ious: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = success_auc(&ious).unwrap();
        assert!((0.0..=1.0).contains(&s));
        // the per-threshold success curve never increases with t
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let t = k as f64 * 0.05;
            let frac = ious.iter().filter(|&&v| v >= t).count() as f64 / 30.0;
            assert!(frac <= prev);
            prev = frac;
        }
    }
}
