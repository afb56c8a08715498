//! End-to-end smoke run on a small phantom corpus.

use mvoct_core::nn::TrainSchedule;
use mvoct_core::phantom::{generate_phantom, PhantomParams};
use mvoct_core::pipeline::{run_pipeline, PipelineConfig, SegmentData};
use mvoct_core::seg::SegConfig;

fn corpus_params(n_frames: usize) -> PhantomParams {
    PhantomParams {
        n_frames,
        alines_per_frame: 64,
        samples_per_aline: 320,
        lumen_radius_mean_px: 80.0,
        lumen_radius_theta_amp_px: 5.0,
        lumen_radius_frame_amp_px: 3.0,
        vessel_count: 2,
        vessel_min_frames: 4,
        guidewire_width_alines: 8,
        confounder_count: 2,
        ..PhantomParams::default()
    }
}

fn small_seg_cfg() -> SegConfig {
    SegConfig {
        input_rows: 64,
        input_cols: 300,
        encoder: vec![(8, 2), (16, 2), (32, 2)],
        aspp_rates: vec![1, 2, 4],
        aspp_channels: 16,
        aspp_global: true,
        decoder_channels: vec![16, 12],
        ..SegConfig::default()
    }
}

#[test]
fn two_fold_pipeline_produces_report() {
    let t0 = std::time::Instant::now();
    let segments: Vec<SegmentData> = (0..4)
        .map(|i| {
            let (pb, truth) = generate_phantom(&corpus_params(12), 100 + i as u64).unwrap();
            SegmentData {
                id: format!("seg{i}"),
                pullback: pb,
                truth,
            }
        })
        .collect();
    println!("phantom gen: {:?}", t0.elapsed());

    let cfg = PipelineConfig {
        folds: 2,
        seg: small_seg_cfg(),
        seg_schedule: TrainSchedule {
            max_epochs: 6,
            batch_size: 4,
            ..TrainSchedule::default()
        },
        clf_schedule: TrainSchedule {
            max_epochs: 8,
            batch_size: 16,
            ..TrainSchedule::default()
        },
        ..PipelineConfig::default()
    };

    let t1 = std::time::Instant::now();
    let report = run_pipeline(&segments, &cfg, 7, None).unwrap();
    println!("pipeline: {:?}", t1.elapsed());
    println!("{}", serde_json::to_string_pretty(&report).unwrap());

    assert_eq!(report.folds.len(), 2);
    for f in &report.folds {
        assert!(f.dice.is_some());
        assert!(f.clf_accuracy.is_some());
        // Refinement never lowers specificity.
        assert!(f.specificity.unwrap() >= f.specificity_before.unwrap());
    }
    assert_eq!(report.frame_agreement.n_frames, 48);
}
