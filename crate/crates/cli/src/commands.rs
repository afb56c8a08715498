//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mvoct_core::augment::{offset_angle_augment, AugmentSpec};
use mvoct_core::candidates::{
    classify_candidates, extract_candidates, make_patch, refine_mask, write_candidates_csv,
    CandidateRecord, ClassifierModel, FrameGeometry, Patch,
};
use mvoct_core::eval::{
    bland_altman, confusion_counts, frame_presence_agreement, linear_regression, paired_t_test,
    pixel_metrics, ConfusionCounts,
};
use mvoct_core::imaging::{load_pullback, save_pullback, FrameMask, PolarPullback, PullbackMeta};
use mvoct_core::phantom::{generate_phantom, GroundTruth};
use mvoct_core::pipeline::{
    build_classifier_patches, mask_area_mm2, predict_all, run_pipeline, PreparedSegment,
    SegmentData,
};
use mvoct_core::preprocess::{
    preprocess_frame, preprocess_mask, AngularInterval, PreprocessedFrame,
};
use mvoct_core::reconstruct::{
    export_ply, filter_min_frames, link_tracks, remove_track_pixels, track_metrics,
    write_tracks_csv, TrackSummary,
};
use mvoct_core::rng::mix;
use mvoct_core::seg::{train_segmentation, SegModel};
use mvoct_core::{Error, Result};

use crate::config::RunConfig;
use crate::logging::Logger;
use crate::{Cli, Command};

pub fn run(cli: &Cli, log: &Logger) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Phantom {
            out,
            frames,
            segments,
        } => {
            let mut cfg = cfg;
            if let Some(f) = frames {
                cfg.frames = *f;
            }
            if let Some(s) = segments {
                cfg.segments = *s;
            }
            cmd_phantom(&cfg, cli.seed, out, cli.force, log)
        }
        Command::Augment {
            input,
            out,
            shifts,
            increment,
        } => {
            let mut cfg = cfg;
            if let Some(s) = shifts {
                cfg.shifts = *s;
            }
            if let Some(i) = increment {
                cfg.increment = *i;
            }
            if cfg.shifts == 0 {
                cfg.shifts = AugmentSpec::default().n_shifts;
            }
            cmd_augment(&cfg, cli.seed, input, out, cli.force, log)
        }
        Command::Preprocess { input, out } => {
            cmd_preprocess(&cfg, cli.seed, input, out, cli.force, log)
        }
        Command::TrainSeg { train, val, out } => {
            cmd_train_seg(&cfg, cli.seed, train, val, out, cli.force, log)
        }
        Command::TrainClf {
            train,
            val,
            seg_checkpoint,
            out,
        } => cmd_train_clf(
            &cfg,
            cli.seed,
            train,
            val,
            seg_checkpoint,
            out,
            cli.force,
            log,
        ),
        Command::Infer {
            data,
            seg_checkpoint,
            clf_checkpoint,
            out,
        } => cmd_infer(
            &cfg,
            cli.seed,
            data,
            seg_checkpoint,
            clf_checkpoint,
            out,
            cli.force,
            log,
        ),
        Command::Evaluate { pred, truth, out } => {
            cmd_evaluate(&cfg, cli.seed, pred, truth, out, cli.force, log)
        }
        Command::Reconstruct3d { data, masks, out } => {
            cmd_reconstruct(&cfg, cli.seed, data, masks.as_deref(), out, cli.force, log)
        }
        Command::Report { inputs, out } => cmd_report(inputs, out, log),
        Command::Pipeline {
            data,
            out,
            folds,
            shifts,
        } => {
            let mut cfg = cfg;
            if let Some(f) = folds {
                cfg.folds = *f;
            }
            if let Some(s) = shifts {
                cfg.shifts = *s;
            }
            cmd_pipeline(&cfg, cli.seed, data, out, cli.force, log)
        }
    }
}

/// Refuses to write into an existing non-empty directory unless forced.
fn check_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                path.display()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

fn write_segment(dir: &Path, pullback: &PolarPullback, truth: &GroundTruth) -> Result<()> {
    save_pullback(pullback, Some(&truth.masks), dir)?;
    truth.save_json(&dir.join("truth.json"))
}

fn cmd_phantom(cfg: &RunConfig, seed: u64, out: &Path, force: bool, log: &Logger) -> Result<()> {
    check_out_dir(out, force)?;
    let params = cfg.phantom_params();
    cfg.write_resolved(out, seed, "phantom")?;
    if cfg.segments <= 1 {
        let (pb, truth) = generate_phantom(&params, seed)?;
        write_segment(out, &pb, &truth)?;
        log.event(
            "phantom",
            &format!("wrote {} frames to {}", pb.n_frames(), out.display()),
        );
    } else {
        for si in 0..cfg.segments {
            let (mut pb, truth) = generate_phantom(&params, mix(seed, si as u64))?;
            pb.segment_id = format!("seg_{si:03}");
            let dir = out.join(format!("seg_{si:03}"));
            write_segment(&dir, &pb, &truth)?;
        }
        log.event(
            "phantom",
            &format!("wrote {} segments to {}", cfg.segments, out.display()),
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

fn cmd_augment(
    cfg: &RunConfig,
    seed: u64,
    input: &Path,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let (pullback, masks) = load_pullback(input)?;
    let spec = AugmentSpec {
        n_shifts: cfg.shifts,
        increment_alines: cfg.increment,
    };
    if spec.aliases(pullback.meta.alines_per_frame) {
        log.event(
            "warn",
            "shift range exceeds one frame; some shifts alias onto earlier re-cuts",
        );
    }
    let masks = masks.unwrap_or_default();
    cfg.write_resolved(out, seed, "augment")?;
    for (k, (pb, m)) in offset_angle_augment(&pullback, &masks, &spec)?
        .into_iter()
        .enumerate()
    {
        let dir = out.join(format!("shift_{:02}", k + 1));
        save_pullback(&pb, (!m.is_empty()).then_some(m.as_slice()), &dir)?;
    }
    log.event("augment", &format!("wrote {} re-cut pullbacks", cfg.shifts));
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess + the on-disk pre-processed segment format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TransformRecord {
    shift_record: Vec<usize>,
    shadow: Option<(usize, usize)>,
    excluded_alines: Vec<bool>,
    raw_samples_per_aline: usize,
}

fn transform_file_name(i: usize) -> String {
    format!("transform_{i:05}.json")
}

fn write_preprocessed(
    out: &Path,
    meta_raw: &PullbackMeta,
    segment_id: &str,
    frames: &[PreprocessedFrame],
    masks_pre: Option<&[FrameMask]>,
    truth_json: Option<&Path>,
) -> Result<()> {
    let meta = PullbackMeta {
        samples_per_aline: frames[0].cols(),
        ..meta_raw.clone()
    };
    let pb = PolarPullback::new(
        meta,
        frames.iter().map(|f| f.pixels.clone()).collect(),
        segment_id.to_string(),
    )?;
    save_pullback(&pb, masks_pre, out)?;
    for (i, f) in frames.iter().enumerate() {
        let rec = TransformRecord {
            shift_record: f.shift_record.clone(),
            shadow: f.shadow.map(|s| (s.start_aline, s.width_alines)),
            excluded_alines: f.excluded_alines.clone(),
            raw_samples_per_aline: meta_raw.samples_per_aline,
        };
        let path = out.join(transform_file_name(i));
        let json = serde_json::to_string(&rec).expect("transform serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(tj) = truth_json {
        std::fs::copy(tj, out.join("truth.json")).map_err(|e| Error::io(tj, e))?;
    }
    Ok(())
}

/// Loads a pre-processed segment directory back into memory.
fn load_preprocessed(
    dir: &Path,
) -> Result<(
    PullbackMeta,
    String,
    Vec<PreprocessedFrame>,
    Option<Vec<FrameMask>>,
    Option<GroundTruth>,
)> {
    let (pb, masks) = load_pullback(dir)?;
    let mut frames = Vec::with_capacity(pb.n_frames());
    for (i, pixels) in pb.frames.iter().enumerate() {
        let path = dir.join(transform_file_name(i));
        let json = std::fs::read_to_string(&path)
            .map_err(|_| Error::Format(format!("missing transform record {}", path.display())))?;
        let rec: TransformRecord = serde_json::from_str(&json)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        frames.push(PreprocessedFrame {
            pixels: pixels.clone(),
            shift_record: rec.shift_record,
            shadow: rec.shadow.map(|(s, w)| AngularInterval {
                start_aline: s,
                width_alines: w,
            }),
            excluded_alines: rec.excluded_alines,
        });
    }
    let truth_path = dir.join("truth.json");
    let truth = if truth_path.exists() {
        let placeholder = masks.clone().unwrap_or_else(|| {
            frames
                .iter()
                .map(|f| FrameMask::zeros(f.rows(), f.cols()))
                .collect()
        });
        Some(GroundTruth::load_json(&truth_path, placeholder)?)
    } else {
        None
    };
    Ok((pb.meta, pb.segment_id, frames, masks, truth))
}

fn cmd_preprocess(
    cfg: &RunConfig,
    seed: u64,
    input: &Path,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let (pullback, masks) = load_pullback(input)?;
    let pcfg = cfg.preprocess_config();
    use rayon::prelude::*;
    let frames: Vec<PreprocessedFrame> = pullback
        .frames
        .par_iter()
        .map(|f| preprocess_frame(f, &pullback.meta, &pcfg))
        .collect::<Result<Vec<_>>>()?;
    let masks_pre: Option<Vec<FrameMask>> = masks.as_ref().map(|ms| {
        ms.iter()
            .zip(&frames)
            .map(|(m, pf)| preprocess_mask(m, pf))
            .collect()
    });
    cfg.write_resolved(out, seed, "preprocess")?;
    let truth_json = input.join("truth.json");
    write_preprocessed(
        out,
        &pullback.meta,
        &pullback.segment_id,
        &frames,
        masks_pre.as_deref(),
        truth_json.exists().then_some(truth_json.as_path()),
    )?;
    log.event(
        "preprocess",
        &format!("{} frames -> {}", frames.len(), out.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// training commands
// ---------------------------------------------------------------------------

/// Loads pre-processed segments as `PreparedSegment`s (for training the
/// ground-truth masks must be present).
fn load_prepared(dirs: &[PathBuf], need_masks: bool) -> Result<Vec<PreparedSegment>> {
    let mut out = Vec::new();
    for dir in dirs {
        let (meta, id, frames, masks, truth) = load_preprocessed(dir)?;
        if need_masks && masks.is_none() {
            return Err(Error::CorruptInput(format!(
                "{}: training requires mask files",
                dir.display()
            )));
        }
        let truth_masks_pre = masks.unwrap_or_else(|| {
            frames
                .iter()
                .map(|f| FrameMask::zeros(f.rows(), f.cols()))
                .collect()
        });
        let geoms = frames
            .iter()
            .map(|pf| FrameGeometry::shifted(&meta, pf.shift_record.clone()))
            .collect();
        let truth = truth.unwrap_or(GroundTruth {
            masks: truth_masks_pre.clone(),
            lumen_radius: Vec::new(),
            shadow_band: Vec::new(),
            vessel_tracks: Vec::new(),
            confounders: Vec::new(),
        });
        out.push(PreparedSegment {
            id: id.clone(),
            group_id: id,
            augmented: false,
            meta,
            frames,
            truth_masks_pre,
            geoms,
            truth,
        });
    }
    Ok(out)
}

fn write_history_csv(path: &Path, history: &[mvoct_core::seg::EpochStats]) -> Result<()> {
    let mut csv = String::from("epoch,lr,train_loss,val_loss,val_dice\n");
    for h in history {
        csv.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{}\n",
            h.epoch,
            h.lr,
            h.train_loss,
            h.val_loss,
            h.val_dice.map_or("nan".into(), |d| format!("{d:.8}"))
        ));
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

fn cmd_train_seg(
    cfg: &RunConfig,
    seed: u64,
    train: &[PathBuf],
    val: &[PathBuf],
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let train_segs = load_prepared(train, true)?;
    let val_segs = load_prepared(val, true)?;
    let rows = train_segs
        .first()
        .map(|s| s.frames[0].rows())
        .ok_or_else(|| Error::Config("no training segments given".into()))?;

    let train_pairs: Vec<_> = train_segs
        .iter()
        .flat_map(|s| s.frames.iter().zip(&s.truth_masks_pre))
        .collect();
    let val_pairs: Vec<_> = val_segs
        .iter()
        .flat_map(|s| s.frames.iter().zip(&s.truth_masks_pre))
        .collect();

    cfg.write_resolved(out, seed, "train-seg")?;
    let mut model = SegModel::build(cfg.seg_config(rows), mix(seed, 0x5E6))?;
    let history = train_segmentation(
        &mut model,
        &train_pairs,
        &val_pairs,
        &cfg.seg_schedule(),
        mix(seed, 0x7124),
    )?;
    model.save(&out.join("seg.ckpt"))?;
    write_history_csv(&out.join("history.csv"), &history)?;
    log.event(
        "train-seg",
        &format!(
            "{} epochs, final val loss {:.5}",
            history.len(),
            history.last().map(|h| h.val_loss).unwrap_or(f64::NAN)
        ),
    );
    Ok(())
}

fn cmd_train_clf(
    cfg: &RunConfig,
    seed: u64,
    train: &[PathBuf],
    val: &[PathBuf],
    seg_checkpoint: &Path,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let train_segs = load_prepared(train, true)?;
    let val_segs = load_prepared(val, true)?;
    let seg_model = SegModel::load(seg_checkpoint)?;

    let train_refs: Vec<&PreparedSegment> = train_segs.iter().collect();
    let val_refs: Vec<&PreparedSegment> = val_segs.iter().collect();
    let train_patches = build_classifier_patches(&seg_model, &train_refs, cfg.min_blob_px)?;
    let val_patches = build_classifier_patches(&seg_model, &val_refs, cfg.min_blob_px)?;

    cfg.write_resolved(out, seed, "train-clf")?;
    let (clf, history) = mvoct_core::candidates::train_classifier(
        &train_patches,
        Some(&val_patches),
        &cfg.clf_schedule(),
        mix(seed, 0xC1F),
    )?;
    clf.save(&out.join("clf.ckpt"))?;
    let mut csv = String::from("epoch,lr,train_loss,val_loss\n");
    for h in &history {
        csv.push_str(&format!(
            "{},{:.8},{:.8},{:.8}\n",
            h.epoch, h.lr, h.train_loss, h.val_loss
        ));
    }
    let hist_path = out.join("history.csv");
    std::fs::write(&hist_path, csv).map_err(|e| Error::io(&hist_path, e))?;
    log.event(
        "train-clf",
        &format!("{} patches, {} epochs", train_patches.len(), history.len()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn cmd_infer(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    seg_checkpoint: &Path,
    clf_checkpoint: &Path,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let (meta, segment_id, frames, _, _) = load_preprocessed(data)?;
    let seg_model = SegModel::load(seg_checkpoint)?;
    let mut clf = ClassifierModel::load(clf_checkpoint)?;

    cfg.write_resolved(out, seed, "infer")?;
    let preds = predict_all(&seg_model, &frames)?;
    let mut refined_masks = Vec::with_capacity(frames.len());
    let mut records: Vec<CandidateRecord> = Vec::new();
    for (fi, (_, pred)) in preds.iter().enumerate() {
        let geom = FrameGeometry::shifted(&meta, frames[fi].shift_record.clone());
        let cands = extract_candidates(pred, &geom, cfg.min_blob_px);
        let patches: Vec<Patch> = cands
            .iter()
            .map(|c| make_patch(&frames[fi].pixels, c))
            .collect::<Result<_>>()?;
        let verdicts = classify_candidates(&mut clf, &patches)?;
        let labels: Vec<bool> = verdicts.iter().map(|&(l, _)| l).collect();
        for (c, &(label, prob)) in cands.iter().zip(&verdicts) {
            records.push(CandidateRecord {
                frame: fi,
                centroid_a: c.centroid_a,
                centroid_r: c.centroid_r_raw,
                area_px: c.area_px,
                area_mm2: c.area_mm2,
                prob_vessel: prob,
                label: u8::from(label),
            });
        }
        refined_masks.push(refine_mask(pred, &cands, &labels));
    }

    // Refined masks in the pre-processed frame geometry.
    let mask_meta = PullbackMeta {
        samples_per_aline: frames[0].cols(),
        ..meta.clone()
    };
    let pb = PolarPullback::new(
        mask_meta,
        frames.iter().map(|f| f.pixels.clone()).collect(),
        segment_id,
    )?;
    save_pullback(&pb, Some(&refined_masks), out)?;
    write_candidates_csv(&out.join("candidates.csv"), &records)?;
    log.event(
        "infer",
        &format!(
            "{} frames, {} candidates ({} kept)",
            frames.len(),
            records.len(),
            records.iter().filter(|r| r.label == 1).count()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn load_masks_dir(dir: &Path) -> Result<(PullbackMeta, Vec<FrameMask>)> {
    let (pb, masks) = load_pullback(dir)?;
    let masks = masks
        .ok_or_else(|| Error::CorruptInput(format!("{}: no mask files found", dir.display())))?;
    Ok((pb.meta, masks))
}

fn cmd_evaluate(
    cfg: &RunConfig,
    seed: u64,
    pred: &Path,
    truth: &Path,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let (meta, pred_masks) = load_masks_dir(pred)?;
    let (_, truth_masks) = load_masks_dir(truth)?;
    if pred_masks.len() != truth_masks.len() {
        return Err(Error::Contract(format!(
            "{} predicted vs {} reference frames",
            pred_masks.len(),
            truth_masks.len()
        )));
    }

    // Optional transforms alongside the predictions supply exclusion flags
    // and the shift needed for physical areas.
    let mut excluded: Vec<Option<Vec<bool>>> = Vec::new();
    let mut geoms: Vec<FrameGeometry> = Vec::new();
    for (i, m) in pred_masks.iter().enumerate() {
        let tpath = pred.join(transform_file_name(i));
        if tpath.exists() {
            let rec: TransformRecord = serde_json::from_str(
                &std::fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?,
            )
            .map_err(|e| Error::Format(format!("{}: {e}", tpath.display())))?;
            let mut flags = vec![false; m.rows() * m.cols()];
            for (a, &ex) in rec.excluded_alines.iter().enumerate() {
                if ex {
                    flags[a * m.cols()..(a + 1) * m.cols()]
                        .iter_mut()
                        .for_each(|f| *f = true);
                }
            }
            excluded.push(Some(flags));
            geoms.push(FrameGeometry::shifted(&meta, rec.shift_record));
        } else {
            excluded.push(None);
            geoms.push(FrameGeometry::raw(&meta));
        }
    }

    cfg.write_resolved(out, seed, "evaluate")?;
    let mut total = ConfusionCounts::default();
    let mut csv = String::from("frame,tp,tn,fp,fn,dice,sensitivity,specificity,accuracy\n");
    let mut pred_areas = Vec::new();
    let mut truth_areas = Vec::new();
    for i in 0..pred_masks.len() {
        let c = confusion_counts(&pred_masks[i], &truth_masks[i], excluded[i].as_deref())?;
        total.add(&c);
        let m = pixel_metrics(&c);
        let fmt = |v: Option<f64>| v.map_or("nan".into(), |x| format!("{x:.6}"));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            i,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            fmt(m.dice),
            fmt(m.sensitivity),
            fmt(m.specificity),
            fmt(m.accuracy)
        ));
        let pa = mask_area_mm2(&pred_masks[i], &geoms[i]);
        let ta = mask_area_mm2(&truth_masks[i], &geoms[i]);
        if pa > 0.0 || ta > 0.0 {
            pred_areas.push(pa);
            truth_areas.push(ta);
        }
    }
    let csv_path = out.join("metrics.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let agreement = frame_presence_agreement(&pred_masks, &truth_masks)?;
    let summary = serde_json::json!({
        "counts": total,
        "metrics": pixel_metrics(&total),
        "frame_agreement": agreement,
        "stats": {
            "n_pairs": pred_areas.len(),
            "regression": linear_regression(&truth_areas, &pred_areas).ok(),
            "bland_altman": bland_altman(&pred_areas, &truth_areas).ok(),
            "t_test": paired_t_test(&pred_areas, &truth_areas).ok(),
        },
    });
    let sum_path = out.join("summary.json");
    std::fs::write(&sum_path, serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| Error::io(&sum_path, e))?;
    log.event(
        "evaluate",
        &format!(
            "dice {:?}, frame diff {:.2}%",
            pixel_metrics(&total).dice,
            agreement.pct_difference
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// reconstruct3d
// ---------------------------------------------------------------------------

fn cmd_reconstruct(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    masks_dir: Option<&Path>,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let (meta, _, frames, own_masks, _) = load_preprocessed(data)?;
    let masks = match masks_dir {
        Some(d) => load_masks_dir(d)?.1,
        None => own_masks.ok_or_else(|| {
            Error::CorruptInput(format!("{}: no masks to reconstruct from", data.display()))
        })?,
    };
    if masks.len() != frames.len() {
        return Err(Error::Contract(format!(
            "{} masks vs {} frames",
            masks.len(),
            frames.len()
        )));
    }

    cfg.write_resolved(out, seed, "reconstruct3d")?;
    let per_frame: Vec<Vec<_>> = masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let geom = FrameGeometry::shifted(&meta, frames[i].shift_record.clone());
            extract_candidates(m, &geom, cfg.min_blob_px)
        })
        .collect();
    let link = cfg.link_config();
    let tracks = link_tracks(&per_frame, &meta, &link);
    let (kept, dropped) = filter_min_frames(tracks, link.min_frames);

    // Remove too-short tracks from the output masks.
    let mut final_masks = masks.clone();
    remove_track_pixels(&mut final_masks, &per_frame, &dropped);
    let mask_meta = PullbackMeta {
        samples_per_aline: frames[0].cols(),
        ..meta.clone()
    };
    let pb = PolarPullback::new(
        mask_meta,
        frames.iter().map(|f| f.pixels.clone()).collect(),
        "tracks".to_string(),
    )?;
    save_pullback(&pb, Some(&final_masks), out)?;

    let mut summaries = Vec::new();
    for (i, t) in kept.iter().enumerate() {
        if t.nodes.len() >= 2 {
            let m = track_metrics(t, &meta)?;
            summaries.push(TrackSummary {
                track_id: i,
                n_frames: t.nodes.len(),
                length_mm: m.length_mm,
                axial_extent_mm: m.axial_extent_mm,
                mean_diameter_um: m.mean_diameter_um,
            });
        }
    }
    write_tracks_csv(&out.join("tracks.csv"), &summaries)?;

    // Lumen rings come from the recorded shifts (the detected lumen radius).
    let contours: Vec<Vec<usize>> = frames.iter().map(|f| f.shift_record.clone()).collect();
    export_ply(
        &contours,
        &kept,
        &meta,
        cfg.ply_ring_step,
        &out.join("model.ply"),
    )?;
    log.event(
        "reconstruct3d",
        &format!("{} tracks kept, {} dropped", kept.len(), dropped.len()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report + pipeline
// ---------------------------------------------------------------------------

fn cmd_report(inputs: &[PathBuf], out: &Path, log: &Logger) -> Result<()> {
    use mvoct_core::pipeline::summarize;
    let mut all_folds: Vec<serde_json::Value> = Vec::new();
    let mut agreements = Vec::new();
    for p in inputs {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        if let Some(folds) = v.get("folds").and_then(|f| f.as_array()) {
            all_folds.extend(folds.iter().cloned());
        }
        if let Some(fa) = v.get("frame_agreement") {
            agreements.push(fa.clone());
        }
    }
    if all_folds.is_empty() {
        return Err(Error::CorruptInput("no folds found in the inputs".into()));
    }
    let metric = |name: &str| -> Vec<Option<f64>> {
        all_folds
            .iter()
            .map(|f| f.get(name).and_then(|v| v.as_f64()))
            .collect()
    };
    let mut summary = serde_json::Map::new();
    for name in [
        "dice",
        "sensitivity",
        "specificity",
        "accuracy",
        "dice_before",
        "clf_accuracy",
        "clf_sensitivity",
        "clf_specificity",
    ] {
        if let Some(s) = summarize(&metric(name)) {
            summary.insert(name.into(), serde_json::to_value(s).unwrap());
        }
    }
    let merged = serde_json::json!({
        "n_runs": inputs.len(),
        "folds": all_folds,
        "summary": summary,
        "frame_agreement": agreements,
    });
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(out, serde_json::to_string_pretty(&merged).unwrap())
        .map_err(|e| Error::io(out, e))?;
    log.event(
        "report",
        &format!(
            "aggregated {} folds",
            merged["folds"].as_array().unwrap().len()
        ),
    );
    Ok(())
}

/// Loads a corpus directory: either one segment or seg_* subdirectories.
fn load_corpus(data: &Path) -> Result<Vec<SegmentData>> {
    let mut segs = Vec::new();
    if data.join("meta.json").exists() {
        segs.push(load_segment_dir(data)?);
    } else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
            .map_err(|e| Error::io(data, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir() && p.join("meta.json").exists())
            .collect();
        dirs.sort();
        for d in dirs {
            segs.push(load_segment_dir(&d)?);
        }
    }
    if segs.is_empty() {
        return Err(Error::Format(format!(
            "{}: no pullback directories found",
            data.display()
        )));
    }
    Ok(segs)
}

fn load_segment_dir(dir: &Path) -> Result<SegmentData> {
    let (pullback, masks) = load_pullback(dir)?;
    let masks = masks.ok_or_else(|| {
        Error::CorruptInput(format!(
            "{}: pipeline needs ground-truth masks",
            dir.display()
        ))
    })?;
    let truth = GroundTruth::load_json(&dir.join("truth.json"), masks)?;
    let id = pullback.segment_id.clone();
    Ok(SegmentData {
        id,
        pullback,
        truth,
    })
}

fn cmd_pipeline(
    cfg: &RunConfig,
    seed: u64,
    data: &Path,
    out: &Path,
    force: bool,
    log: &Logger,
) -> Result<()> {
    check_out_dir(out, force)?;
    let segments = load_corpus(data)?;
    let rows = segments[0].pullback.meta.alines_per_frame;
    cfg.write_resolved(out, seed, "pipeline")?;
    let pcfg = cfg.pipeline_config(rows);
    let report = run_pipeline(&segments, &pcfg, seed, Some(out))?;
    let path = out.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| Error::io(&path, e))?;
    if let Some(d) = report.summary.get("dice") {
        log.event(
            "pipeline",
            &format!("mean test dice {:.4} ± {:.4}", d.mean, d.sd),
        );
    }
    Ok(())
}
