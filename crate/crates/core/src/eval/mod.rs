//! Pixel-wise evaluation, grouped cross-validation planning, frame-presence
//! agreement, and agreement statistics.

mod stats;

pub use stats::{
    bland_altman, linear_regression, paired_t_test, student_t_cdf, two_sided_t_pvalue, BlandAltman,
    PairedTTest, Regression,
};

use serde::Serialize;

use crate::imaging::FrameMask;
use crate::rng::stream_rng;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Confusion counts and pixel metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Elementwise sum; aggregating frames is adding their counts.
    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Pixel-wise tallies over non-excluded pixels.
pub fn confusion_counts(
    pred: &FrameMask,
    truth: &FrameMask,
    excluded: Option<&[bool]>,
) -> Result<ConfusionCounts> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(Error::Contract(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    if let Some(ex) = excluded {
        if ex.len() != pred.rows() * pred.cols() {
            return Err(Error::Contract("excluded flags length mismatch".into()));
        }
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &t)) in pred.as_slice().iter().zip(truth.as_slice()).enumerate() {
        if excluded.map_or(false, |ex| ex[i]) {
            continue;
        }
        match (p, t) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => unreachable!("masks are binary"),
        }
    }
    Ok(c)
}

/// Metrics with zero denominators are surfaced as `None` (undefined), never
/// silently 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PixelMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub dice: Option<f64>,
}

pub fn pixel_metrics(c: &ConfusionCounts) -> PixelMetrics {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    PixelMetrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

// ---------------------------------------------------------------------------
// Grouped k-fold planning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Fold {
    pub test: Vec<String>,
    pub val: Vec<String>,
    pub train: Vec<String>,
}

/// Per-fold segment assignments. Splits are always by segment, never by frame.
#[derive(Debug, Clone, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Plans grouped k-fold cross-validation over segments.
///
/// The k test sets partition the segments with sizes differing by at most
/// one; the remainder of each fold is split train/val as close to the given
/// ratios (of the total) as segment granularity allows.
pub fn group_kfold(
    segments: &[(String, usize)],
    k: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<FoldPlan> {
    let n = segments.len();
    if k < 2 {
        return Err(Error::Config("k must be >= 2".into()));
    }
    if n < k {
        return Err(Error::Config(format!("{n} segments cannot fill {k} folds")));
    }
    let (r_train, r_val, r_test) = ratios;
    if !(r_train > 0.0 && r_val >= 0.0 && r_test > 0.0)
        || (r_train + r_val + r_test - 1.0).abs() > 1e-6
    {
        return Err(Error::Config(format!(
            "ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }

    // Seeded Fisher–Yates shuffle.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0xF01D);
    for i in (1..n).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }

    // Near-equal test partitions: the first n % k folds get one extra.
    let base = n / k;
    let extra = n % k;
    let mut bounds = Vec::with_capacity(k + 1);
    let mut acc = 0;
    bounds.push(0);
    for f in 0..k {
        acc += base + usize::from(f < extra);
        bounds.push(acc);
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test_idx = &order[bounds[f]..bounds[f + 1]];
        let rest: Vec<usize> = order
            .iter()
            .copied()
            .filter(|i| !test_idx.contains(i))
            .collect();
        // Validation count closest to r_val of the total, by segment count.
        let mut n_val = (r_val * n as f64).round() as usize;
        n_val = n_val.min(rest.len().saturating_sub(1));
        if r_val > 0.0 && rest.len() >= 2 {
            n_val = n_val.max(1);
        }
        let (train_idx, val_idx) = rest.split_at(rest.len() - n_val);
        let name = |i: &usize| segments[*i].0.clone();
        folds.push(Fold {
            test: test_idx.iter().map(name).collect(),
            val: val_idx.iter().map(name).collect(),
            train: train_idx.iter().map(name).collect(),
        });
    }
    Ok(FoldPlan { folds })
}

// ---------------------------------------------------------------------------
// Frame-presence agreement
// ---------------------------------------------------------------------------

/// Frame-level agreement between predicted and reference microvessel
/// presence. False-positive/negative frame rates are reported under both
/// normalizations (of all frames, and of reference-positive frames).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrameAgreement {
    pub n_frames: usize,
    pub n_pred_frames: usize,
    pub n_truth_frames: usize,
    /// |n_pred − n_truth| / n_truth × 100.
    pub pct_difference: f64,
    pub fp_frames: usize,
    pub fn_frames: usize,
    pub fp_pct_of_total: f64,
    pub fn_pct_of_total: f64,
    pub fp_pct_of_truth_positives: f64,
    pub fn_pct_of_truth_positives: f64,
}

/// A frame is positive iff its mask contains at least one microvessel pixel.
pub fn frame_presence_agreement(
    pred_masks: &[FrameMask],
    truth_masks: &[FrameMask],
) -> Result<FrameAgreement> {
    if pred_masks.len() != truth_masks.len() {
        return Err(Error::Contract(format!(
            "{} predicted vs {} reference frames",
            pred_masks.len(),
            truth_masks.len()
        )));
    }
    let pred: Vec<bool> = pred_masks.iter().map(|m| m.any_positive()).collect();
    let truth: Vec<bool> = truth_masks.iter().map(|m| m.any_positive()).collect();
    presence_agreement(&pred, &truth)
}

/// Same as [`frame_presence_agreement`] but on precomputed presence flags.
pub fn presence_agreement(pred: &[bool], truth: &[bool]) -> Result<FrameAgreement> {
    if pred.len() != truth.len() {
        return Err(Error::Contract("presence flag counts differ".into()));
    }
    let n = pred.len();
    let n_pred = pred.iter().filter(|&&p| p).count();
    let n_truth = truth.iter().filter(|&&t| t).count();
    let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p && !t).count();
    let fn_ = pred.iter().zip(truth).filter(|&(&p, &t)| !p && t).count();
    let pct = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64 * 100.0
        }
    };
    Ok(FrameAgreement {
        n_frames: n,
        n_pred_frames: n_pred,
        n_truth_frames: n_truth,
        pct_difference: pct(n_pred.abs_diff(n_truth), n_truth),
        fp_frames: fp,
        fn_frames: fn_,
        fp_pct_of_total: pct(fp, n),
        fn_pct_of_total: pct(fn_, n),
        fp_pct_of_truth_positives: pct(fp, n_truth),
        fn_pct_of_truth_positives: pct(fn_, n_truth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(rows: usize, cols: usize, ones: &[(usize, usize)]) -> FrameMask {
        let mut m = FrameMask::zeros(rows, cols);
        for &(a, r) in ones {
            m.set(a, r, 1);
        }
        m
    }

    #[test]
    fn perfect_prediction_counts() {
        let t = mask_with(4, 4, &[(0, 0), (1, 1), (2, 2)]);
        let c = confusion_counts(&t, &t, None).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 3,
                tn: 13,
                fp: 0,
                fn_: 0
            }
        );
        let m = pixel_metrics(&c);
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.dice, Some(1.0));
    }

    #[test]
    fn empty_prediction_counts_false_negatives() {
        let t = mask_with(3, 3, &[(0, 0), (2, 2)]);
        let p = FrameMask::zeros(3, 3);
        let c = confusion_counts(&p, &t, None).unwrap();
        assert_eq!(c.fn_, 2);
        let m = pixel_metrics(&c);
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.dice, Some(0.0));
    }

    #[test]
    fn random_masks_match_bruteforce() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(90, 0);
        for _ in 0..20 {
            let mut p = FrameMask::zeros(8, 8);
            let mut t = FrameMask::zeros(8, 8);
            let mut ex = vec![false; 64];
            for i in 0..64 {
                if rng.gen::<f64>() < 0.4 {
                    p.set(i / 8, i % 8, 1);
                }
                if rng.gen::<f64>() < 0.4 {
                    t.set(i / 8, i % 8, 1);
                }
                ex[i] = rng.gen::<f64>() < 0.1;
            }
            let c = confusion_counts(&p, &t, Some(&ex)).unwrap();
            let mut want = ConfusionCounts::default();
            for i in 0..64 {
                if ex[i] {
                    continue;
                }
                match (p.get(i / 8, i % 8), t.get(i / 8, i % 8)) {
                    (1, 1) => want.tp += 1,
                    (0, 0) => want.tn += 1,
                    (1, 0) => want.fp += 1,
                    _ => want.fn_ += 1,
                }
            }
            assert_eq!(c, want);
            assert_eq!(c.total(), 64 - ex.iter().filter(|&&e| e).count() as u64);
        }
    }

    #[test]
    fn metrics_match_direct_arithmetic() {
        let c = ConfusionCounts {
            tp: 8,
            tn: 80,
            fp: 2,
            fn_: 10,
        };
        let m = pixel_metrics(&c);
        assert!((m.sensitivity.unwrap() - 8.0 / 18.0).abs() < 1e-12);
        assert!((m.specificity.unwrap() - 80.0 / 82.0).abs() < 1e-12);
        assert!((m.accuracy.unwrap() - 0.88).abs() < 1e-12);
        assert!((m.dice.unwrap() - 16.0 / 28.0).abs() < 1e-12);
        // Rounded views from the definition.
        assert!((m.sensitivity.unwrap() - 0.4444).abs() < 1e-4);
        assert!((m.specificity.unwrap() - 0.9756).abs() < 1e-4);
        assert!((m.dice.unwrap() - 0.5714).abs() < 1e-4);
    }

    #[test]
    fn undefined_metrics_are_none() {
        let c = ConfusionCounts {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 0,
        };
        let m = pixel_metrics(&c);
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.dice, None);
        assert_eq!(m.specificity, Some(1.0));
    }

    #[test]
    fn kfold_122_segments_gives_24_25_test_sizes() {
        let segments: Vec<(String, usize)> = (0..122).map(|i| (format!("s{i:03}"), 40)).collect();
        let plan = group_kfold(&segments, 5, (0.70, 0.15, 0.15), 7).unwrap();
        let mut sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![24, 24, 24, 25, 25]);
    }

    #[test]
    fn kfold_partitions_exactly_and_disjointly() {
        use std::collections::HashSet;
        let segments: Vec<(String, usize)> = (0..23).map(|i| (format!("s{i}"), 10)).collect();
        let plan = group_kfold(&segments, 5, (0.70, 0.15, 0.15), 3).unwrap();
        let mut seen_in_test = HashSet::new();
        for fold in &plan.folds {
            let test: HashSet<_> = fold.test.iter().cloned().collect();
            let val: HashSet<_> = fold.val.iter().cloned().collect();
            let train: HashSet<_> = fold.train.iter().cloned().collect();
            assert!(test.is_disjoint(&val));
            assert!(test.is_disjoint(&train));
            assert!(val.is_disjoint(&train));
            assert_eq!(test.len() + val.len() + train.len(), 23);
            for s in &test {
                assert!(seen_in_test.insert(s.clone()), "{s} tested twice");
            }
            assert!(!fold.train.is_empty() && !fold.val.is_empty());
        }
        assert_eq!(seen_in_test.len(), 23);
    }

    #[test]
    fn kfold_five_segments_tests_one_each() {
        let segments: Vec<(String, usize)> = (0..5).map(|i| (format!("s{i}"), 10)).collect();
        let plan = group_kfold(&segments, 5, (0.70, 0.15, 0.15), 11).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 1);
            assert_eq!(fold.val.len(), 1);
            assert_eq!(fold.train.len(), 3);
        }
    }

    #[test]
    fn kfold_reproducible_and_seed_sensitive() {
        let segments: Vec<(String, usize)> = (0..17).map(|i| (format!("s{i}"), 10)).collect();
        let a = group_kfold(&segments, 5, (0.70, 0.15, 0.15), 1).unwrap();
        let b = group_kfold(&segments, 5, (0.70, 0.15, 0.15), 1).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = group_kfold(&segments, 5, (0.70, 0.15, 0.15), 2).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn kfold_too_few_segments_is_config_error() {
        let segments: Vec<(String, usize)> = (0..4).map(|i| (format!("s{i}"), 10)).collect();
        assert!(matches!(
            group_kfold(&segments, 5, (0.70, 0.15, 0.15), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn presence_identical_sets_agree() {
        let flags = vec![true, false, true];
        let r = presence_agreement(&flags, &flags).unwrap();
        assert_eq!(r.pct_difference, 0.0);
        assert_eq!((r.fp_frames, r.fn_frames), (0, 0));
    }

    #[test]
    fn presence_698_vs_730_reports_4_38_percent() {
        let n = 2812;
        let pred: Vec<bool> = (0..n).map(|i| i < 698).collect();
        let truth: Vec<bool> = (0..n).map(|i| i < 730).collect();
        let r = presence_agreement(&pred, &truth).unwrap();
        assert!(
            (r.pct_difference - 4.38).abs() < 0.005,
            "{}",
            r.pct_difference
        );
        assert_eq!((r.pct_difference * 10.0).round() / 10.0, 4.4);
    }

    #[test]
    fn presence_hand_enumerated_fp_fn() {
        // 3 frames: pred positive on {0,1}, truth on {1,2}.
        let pred = vec![true, true, false];
        let truth = vec![false, true, true];
        let r = presence_agreement(&pred, &truth).unwrap();
        assert_eq!(r.fp_frames, 1);
        assert_eq!(r.fn_frames, 1);
        assert!((r.fp_pct_of_total - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.fn_pct_of_total - 100.0 / 3.0).abs() < 1e-12);
    }
}
