//! End-to-end cross-validated pipeline: preprocessing, segmentation training,
//! candidate-classifier training, inference with mask refinement, evaluation,
//! and the aggregated report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{offset_angle_augment, AugmentSpec};
use crate::candidates::{
    candidate_from_pixels, classify_candidates, extract_candidates, make_patch, refine_mask,
    train_classifier, Candidate, FrameGeometry, Patch,
};
use crate::eval::{
    bland_altman, confusion_counts, group_kfold, linear_regression, paired_t_test, pixel_metrics,
    presence_agreement, BlandAltman, ConfusionCounts, FrameAgreement, PairedTTest, Regression,
};
use crate::imaging::{FrameMask, PolarPullback};
use crate::nn::TrainSchedule;
use crate::phantom::GroundTruth;
use crate::preprocess::{preprocess_frame, preprocess_mask, PreprocessConfig, PreprocessedFrame};
use crate::reconstruct::{filter_min_frames, link_tracks, LinkConfig};
use crate::rng::mix;
use crate::seg::{predict_mask, train_segmentation, SegConfig, SegModel};
use crate::{Error, Result};

/// One vessel segment of the corpus: pullback + ground truth.
#[derive(Debug, Clone)]
pub struct SegmentData {
    pub id: String,
    pub pullback: PolarPullback,
    pub truth: GroundTruth,
}

/// All knobs of the end-to-end run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub folds: usize,
    pub ratios: (f64, f64, f64),
    /// Offset-angle augmentation shifts applied to training folds
    /// (0 disables augmentation).
    pub augment_shifts: usize,
    pub augment_increment: usize,
    pub preprocess: PreprocessConfig,
    pub seg: SegConfig,
    pub seg_schedule: TrainSchedule,
    pub clf_schedule: TrainSchedule,
    pub link: LinkConfig,
    pub min_blob_px: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            ratios: (0.70, 0.15, 0.15),
            augment_shifts: 0,
            augment_increment: 55,
            preprocess: PreprocessConfig::default(),
            seg: SegConfig::default(),
            seg_schedule: TrainSchedule::default(),
            clf_schedule: TrainSchedule {
                batch_size: 16,
                ..TrainSchedule::default()
            },
            link: LinkConfig::default(),
            min_blob_px: crate::candidates::MIN_BLOB_PX,
        }
    }
}

/// A segment after preprocessing: network-ready frames plus the ground truth
/// co-transformed into preprocessed coordinates.
pub struct PreparedSegment {
    pub id: String,
    pub meta: crate::imaging::PullbackMeta,
    /// Base segment id this data belongs to for fold assignment (augmented
    /// copies keep their source segment's id here).
    pub group_id: String,
    /// True for offset-angle augmented copies (used for training only).
    pub augmented: bool,
    pub frames: Vec<PreprocessedFrame>,
    pub truth_masks_pre: Vec<FrameMask>,
    pub geoms: Vec<FrameGeometry>,
    pub truth: GroundTruth,
}

/// Preprocesses one segment, frame-parallel.
pub fn prepare_segment(
    seg: &SegmentData,
    cfg: &PreprocessConfig,
    group_id: &str,
    augmented: bool,
) -> Result<PreparedSegment> {
    let meta = &seg.pullback.meta;
    let frames: Vec<PreprocessedFrame> = seg
        .pullback
        .frames
        .par_iter()
        .map(|f| preprocess_frame(f, meta, cfg))
        .collect::<Result<Vec<_>>>()?;
    let truth_masks_pre: Vec<FrameMask> = frames
        .iter()
        .zip(&seg.truth.masks)
        .map(|(pf, m)| preprocess_mask(m, pf))
        .collect();
    let geoms = frames
        .iter()
        .map(|pf| FrameGeometry::shifted(meta, pf.shift_record.clone()))
        .collect();
    Ok(PreparedSegment {
        id: seg.id.clone(),
        meta: seg.pullback.meta.clone(),
        group_id: group_id.to_string(),
        augmented,
        frames,
        truth_masks_pre,
        geoms,
        truth: seg.truth.clone(),
    })
}

/// Sum of the polar Jacobian over mask pixels, in mm².
pub fn mask_area_mm2(mask: &FrameMask, geom: &FrameGeometry) -> f64 {
    let mut area = 0.0;
    for a in 0..mask.rows() {
        for r in 0..mask.cols() {
            if mask.get(a, r) == 1 {
                let r_raw = match &geom.shift_record {
                    Some(rec) => r + rec[a],
                    None => r,
                };
                area += (r_raw as f64 + 0.5) * geom.r_pixel_mm * geom.r_pixel_mm * geom.d_theta_rad;
            }
        }
    }
    area
}

/// Classifier dataset for a list of segments: candidates from the predicted
/// masks labeled by ground-truth overlap, plus ground-truth vessel blobs as
/// guaranteed positives and confounder blobs as guaranteed negatives.
pub fn build_classifier_patches(
    seg_model: &SegModel,
    segments: &[&PreparedSegment],
    min_blob_px: usize,
) -> Result<Vec<(Patch, bool)>> {
    let mut out = Vec::new();
    for ps in segments {
        let pred_masks = predict_all(seg_model, &ps.frames)?;
        for (fi, (_, pred)) in pred_masks.iter().enumerate() {
            let geom = &ps.geoms[fi];
            let truth = &ps.truth_masks_pre[fi];
            // Predicted blobs, labeled by overlap with the truth mask.
            for c in extract_candidates(pred, geom, min_blob_px) {
                let overlap = c.blob_pixels.iter().any(|&(a, r)| truth.get(a, r) == 1);
                let patch = make_patch(&ps.frames[fi].pixels, &c)?;
                out.push((patch, overlap));
            }
            // Ground-truth vessel blobs: guaranteed positives.
            for c in extract_candidates(truth, geom, min_blob_px) {
                let patch = make_patch(&ps.frames[fi].pixels, &c)?;
                out.push((patch, true));
            }
        }
        // Confounder blobs: guaranteed negatives (mapped into preprocessed
        // coordinates through the recorded shift).
        let rows = ps.frames[0].rows();
        let roi = ps.frames[0].cols();
        for blob in &ps.truth.confounders {
            let fi = blob.frame;
            let shift = &ps.frames[fi].shift_record;
            let px: Vec<(usize, usize)> = blob
                .pixels
                .iter()
                .filter_map(|&(a, r)| {
                    let a = a as usize;
                    let r = r as usize;
                    let s = shift[a];
                    (r >= s && r - s < roi).then(|| (a, r - s))
                })
                .collect();
            if let Some(c) = candidate_from_pixels(&px, rows, &ps.geoms[fi], min_blob_px) {
                let patch = make_patch(&ps.frames[fi].pixels, &c)?;
                out.push((patch, false));
            }
        }
    }
    Ok(out)
}

/// Frame-parallel inference; clones the model per worker (inference is pure).
pub fn predict_all(
    model: &SegModel,
    frames: &[PreprocessedFrame],
) -> Result<Vec<(crate::nn::Tensor4, FrameMask)>> {
    frames
        .par_iter()
        .map(|f| {
            let mut m = model.clone();
            predict_mask(&mut m, f)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_segments: Vec<String>,
    pub seg_epochs: usize,
    /// Metrics after candidate classification (the headline numbers).
    pub dice: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    /// Metrics before candidate classification.
    pub dice_before: Option<f64>,
    pub sensitivity_before: Option<f64>,
    pub specificity_before: Option<f64>,
    pub accuracy_before: Option<f64>,
    /// Candidate-classifier performance on held-out test candidates.
    pub clf_accuracy: Option<f64>,
    pub clf_sensitivity: Option<f64>,
    pub clf_specificity: Option<f64>,
    pub n_tracks: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub sd: f64,
}

/// Mean ± sample sd of the defined values.
pub fn summarize(values: &[Option<f64>]) -> Option<SummaryStat> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return None;
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let sd = if defined.len() > 1 {
        (defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(SummaryStat { mean, sd })
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsBlock {
    pub n_pairs: usize,
    pub regression: Option<Regression>,
    pub bland_altman: Option<BlandAltman>,
    pub t_test: Option<PairedTTest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub summary: BTreeMap<String, SummaryStat>,
    pub frame_agreement: FrameAgreement,
    pub stats: StatsBlock,
}

/// Runs the full grouped-k-fold pipeline over a corpus of segments.
/// When `artifacts_dir` is given, per-fold checkpoints and training history
/// land there (`seg_fold{k}.ckpt`, `clf_fold{k}.ckpt`, `history_fold{k}.csv`).
pub fn run_pipeline(
    segments: &[SegmentData],
    cfg: &PipelineConfig,
    seed: u64,
    artifacts_dir: Option<&std::path::Path>,
) -> Result<PipelineReport> {
    if let Some(dir) = artifacts_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if segments.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let plan = group_kfold(
        &segments
            .iter()
            .map(|s| (s.id.clone(), s.pullback.n_frames()))
            .collect::<Vec<_>>(),
        cfg.folds,
        cfg.ratios,
        seed,
    )?;

    // Preprocess originals once; augmented copies (training-only) as needed.
    let mut prepared: Vec<PreparedSegment> = Vec::new();
    for seg in segments {
        prepared.push(prepare_segment(seg, &cfg.preprocess, &seg.id, false)?);
        if cfg.augment_shifts > 0 {
            let spec = AugmentSpec {
                n_shifts: cfg.augment_shifts,
                increment_alines: cfg.augment_increment,
            };
            for (k, (pb, masks)) in offset_angle_augment(&seg.pullback, &seg.truth.masks, &spec)?
                .into_iter()
                .enumerate()
            {
                let aug = SegmentData {
                    id: format!("{}+shift{}", seg.id, k + 1),
                    pullback: pb,
                    truth: GroundTruth {
                        masks,
                        ..seg.truth.clone()
                    },
                };
                prepared.push(prepare_segment(&aug, &cfg.preprocess, &seg.id, true)?);
            }
        }
    }

    let by_group = |group: &str, augmented_ok: bool| -> Vec<&PreparedSegment> {
        prepared
            .iter()
            .filter(|p| p.group_id == group && (augmented_ok || !p.augmented))
            .collect()
    };

    let mut fold_reports = Vec::new();
    let mut all_presence_pred = Vec::new();
    let mut all_presence_truth = Vec::new();
    let mut area_pairs: Vec<(f64, f64)> = Vec::new(); // (pred, truth) mm²

    for (fi, fold) in plan.folds.iter().enumerate() {
        let train_segs: Vec<&PreparedSegment> = fold
            .train
            .iter()
            .flat_map(|id| by_group(id, true))
            .collect();
        let val_segs: Vec<&PreparedSegment> =
            fold.val.iter().flat_map(|id| by_group(id, false)).collect();
        let test_segs: Vec<&PreparedSegment> = fold
            .test
            .iter()
            .flat_map(|id| by_group(id, false))
            .collect();

        let train_pairs: Vec<(&PreprocessedFrame, &FrameMask)> = train_segs
            .iter()
            .flat_map(|ps| ps.frames.iter().zip(&ps.truth_masks_pre))
            .collect();
        let val_pairs: Vec<(&PreprocessedFrame, &FrameMask)> = val_segs
            .iter()
            .flat_map(|ps| ps.frames.iter().zip(&ps.truth_masks_pre))
            .collect();

        // Stage 1: segmentation.
        let mut seg_model = SegModel::build(cfg.seg.clone(), mix(seed, 0x5E6_0000 + fi as u64))?;
        let history = train_segmentation(
            &mut seg_model,
            &train_pairs,
            &val_pairs,
            &cfg.seg_schedule,
            mix(seed, 0x7124_0000 + fi as u64),
        )?;

        // Stage 2: candidate classifier.
        if let Some(dir) = artifacts_dir {
            seg_model.save(&dir.join(format!("seg_fold{fi}.ckpt")))?;
            let mut csv = String::from("epoch,lr,train_loss,val_loss,val_dice\n");
            for h in &history {
                csv.push_str(&format!(
                    "{},{:.8},{:.8},{:.8},{}\n",
                    h.epoch,
                    h.lr,
                    h.train_loss,
                    h.val_loss,
                    h.val_dice
                        .map_or(String::from("nan"), |d| format!("{d:.8}"))
                ));
            }
            let path = dir.join(format!("history_fold{fi}.csv"));
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }

        let train_patches = build_classifier_patches(&seg_model, &train_segs, cfg.min_blob_px)?;
        let val_patches = build_classifier_patches(&seg_model, &val_segs, cfg.min_blob_px)?;
        let (mut clf, _) = train_classifier(
            &train_patches,
            Some(&val_patches),
            &cfg.clf_schedule,
            mix(seed, 0xC1F_0000 + fi as u64),
        )?;
        if let Some(dir) = artifacts_dir {
            clf.save(&dir.join(format!("clf_fold{fi}.ckpt")))?;
        }

        // Test evaluation.
        let mut before = ConfusionCounts::default();
        let mut after = ConfusionCounts::default();
        let mut clf_tp = 0u64;
        let mut clf_tn = 0u64;
        let mut clf_fp = 0u64;
        let mut clf_fn = 0u64;
        let mut n_tracks = 0usize;

        for ps in &test_segs {
            let preds = predict_all(&seg_model, &ps.frames)?;
            let mut refined_masks = Vec::with_capacity(preds.len());
            let mut per_frame_cands: Vec<Vec<Candidate>> = Vec::with_capacity(preds.len());

            for (fidx, (_, pred)) in preds.iter().enumerate() {
                let geom = &ps.geoms[fidx];
                let truth = &ps.truth_masks_pre[fidx];
                let excluded = ps.frames[fidx].excluded_flat();

                before.add(&confusion_counts(pred, truth, Some(&excluded))?);

                let cands = extract_candidates(pred, geom, cfg.min_blob_px);
                let patches: Vec<Patch> = cands
                    .iter()
                    .map(|c| make_patch(&ps.frames[fidx].pixels, c))
                    .collect::<Result<_>>()?;
                let verdicts = classify_candidates(&mut clf, &patches)?;
                let labels: Vec<bool> = verdicts.iter().map(|&(l, _)| l).collect();

                // Classifier confusion against ground-truth overlap.
                for (c, &(pred_label, _)) in cands.iter().zip(&verdicts) {
                    let is_vessel = c.blob_pixels.iter().any(|&(a, r)| truth.get(a, r) == 1);
                    match (pred_label, is_vessel) {
                        (true, true) => clf_tp += 1,
                        (false, false) => clf_tn += 1,
                        (true, false) => clf_fp += 1,
                        (false, true) => clf_fn += 1,
                    }
                }

                let refined = refine_mask(pred, &cands, &labels);
                after.add(&confusion_counts(&refined, truth, Some(&excluded))?);

                // Keep positives for track linking.
                let kept: Vec<Candidate> = cands
                    .into_iter()
                    .zip(&labels)
                    .filter_map(|(c, &keep)| keep.then_some(c))
                    .collect();
                per_frame_cands.push(kept);
                refined_masks.push(refined);
            }

            // 3-D tracks over the refined detections of this segment.
            let tracks = link_tracks(&per_frame_cands, &ps.meta, &cfg.link);
            let (kept_tracks, _) = filter_min_frames(tracks, cfg.link.min_frames);
            n_tracks += kept_tracks.len();

            // Frame presence + per-frame areas for the stats block.
            for (fidx, refined) in refined_masks.iter().enumerate() {
                all_presence_pred.push(refined.any_positive());
                all_presence_truth.push(ps.truth_masks_pre[fidx].any_positive());
                let pa = mask_area_mm2(refined, &ps.geoms[fidx]);
                let ta = mask_area_mm2(&ps.truth_masks_pre[fidx], &ps.geoms[fidx]);
                if pa > 0.0 || ta > 0.0 {
                    area_pairs.push((pa, ta));
                }
            }
        }

        let mb = pixel_metrics(&before);
        let ma = pixel_metrics(&after);
        let clf_total = clf_tp + clf_tn + clf_fp + clf_fn;
        fold_reports.push(FoldReport {
            fold: fi,
            test_segments: fold.test.clone(),
            seg_epochs: history.len(),
            dice: ma.dice,
            sensitivity: ma.sensitivity,
            specificity: ma.specificity,
            accuracy: ma.accuracy,
            dice_before: mb.dice,
            sensitivity_before: mb.sensitivity,
            specificity_before: mb.specificity,
            accuracy_before: mb.accuracy,
            clf_accuracy: (clf_total > 0).then(|| (clf_tp + clf_tn) as f64 / clf_total as f64),
            clf_sensitivity: (clf_tp + clf_fn > 0)
                .then(|| clf_tp as f64 / (clf_tp + clf_fn) as f64),
            clf_specificity: (clf_tn + clf_fp > 0)
                .then(|| clf_tn as f64 / (clf_tn + clf_fp) as f64),
            n_tracks,
        });
    }

    let mut summary = BTreeMap::new();
    let fields: [(&str, fn(&FoldReport) -> Option<f64>); 8] = [
        ("dice", |f| f.dice),
        ("sensitivity", |f| f.sensitivity),
        ("specificity", |f| f.specificity),
        ("accuracy", |f| f.accuracy),
        ("dice_before", |f| f.dice_before),
        ("clf_accuracy", |f| f.clf_accuracy),
        ("clf_sensitivity", |f| f.clf_sensitivity),
        ("clf_specificity", |f| f.clf_specificity),
    ];
    for (name, get) in fields {
        if let Some(s) = summarize(&fold_reports.iter().map(get).collect::<Vec<_>>()) {
            summary.insert(name.to_string(), s);
        }
    }

    let frame_agreement = presence_agreement(&all_presence_pred, &all_presence_truth)?;

    let (pred_areas, truth_areas): (Vec<f64>, Vec<f64>) = area_pairs.iter().copied().unzip();
    let stats = StatsBlock {
        n_pairs: area_pairs.len(),
        regression: linear_regression(&truth_areas, &pred_areas).ok(),
        bland_altman: bland_altman(&pred_areas, &truth_areas).ok(),
        t_test: paired_t_test(&pred_areas, &truth_areas).ok(),
    };

    Ok(PipelineReport {
        seed,
        folds: fold_reports,
        summary,
        frame_agreement,
        stats,
    })
}
