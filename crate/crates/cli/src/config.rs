//! Flat run configuration: defaults ← config file ← command-line flags.
//!
//! The file is a single flat JSON object; unknown keys are rejected. Every
//! effective value is echoed to `resolved_config.json` in the output
//! directory so a run can be reproduced exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mvoct_core::nn::TrainSchedule;
use mvoct_core::phantom::PhantomParams;
use mvoct_core::pipeline::PipelineConfig;
use mvoct_core::preprocess::PreprocessConfig;
use mvoct_core::reconstruct::LinkConfig;
use mvoct_core::seg::SegConfig;
use mvoct_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Phantom generation.
    pub frames: usize,
    pub segments: usize,
    pub alines_per_frame: usize,
    pub samples_per_aline: usize,
    pub r_pixel_um: f64,
    pub frame_spacing_mm: f64,
    pub lumen_radius_mean_px: f64,
    pub lumen_radius_theta_amp_px: f64,
    pub lumen_radius_frame_amp_px: f64,
    pub tissue_intensity: f64,
    pub speckle_contrast: f64,
    pub vessel_count: usize,
    pub vessel_radius_min_px: f64,
    pub vessel_radius_max_px: f64,
    pub vessel_min_frames: usize,
    pub guidewire_width_alines: usize,
    pub confounder_count: usize,

    // Offset-angle augmentation.
    pub shifts: usize,
    pub increment: usize,

    // Pre-processing.
    pub roi_depth_px: usize,
    pub gauss_ksize: usize,
    pub gauss_sigma: f64,
    pub lumen_lambda: f64,
    pub lumen_max_step: usize,
    pub gw_window: usize,

    // Segmentation network (0 rows = derive from the data).
    pub seg_input_rows: usize,
    pub seg_input_cols: usize,
    pub seg_resize_input: bool,
    pub seg_channels: Vec<usize>,
    pub aspp_rates: Vec<usize>,
    pub aspp_channels: usize,
    pub aspp_global: bool,
    pub decoder_channels: Vec<usize>,

    // Training schedules.
    pub lr0: f64,
    pub drop_factor: f64,
    pub drop_period_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_rel_improve: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub clf_max_epochs: usize,
    pub clf_batch_size: usize,

    // Candidates / linking / reporting.
    pub min_blob_px: usize,
    pub link_max_dr_px: f64,
    pub link_max_dtheta_alines: f64,
    pub min_track_frames: usize,
    pub ply_ring_step: usize,

    // Cross-validation.
    pub folds: usize,
    pub ratio_train: f64,
    pub ratio_val: f64,
    pub ratio_test: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phantom = PhantomParams::default();
        let pre = PreprocessConfig::default();
        let seg = SegConfig::default();
        let sched = TrainSchedule::default();
        let link = LinkConfig::default();
        Self {
            frames: phantom.n_frames,
            segments: 1,
            alines_per_frame: phantom.alines_per_frame,
            samples_per_aline: phantom.samples_per_aline,
            r_pixel_um: phantom.r_pixel_um,
            frame_spacing_mm: phantom.frame_spacing_mm,
            lumen_radius_mean_px: phantom.lumen_radius_mean_px,
            lumen_radius_theta_amp_px: phantom.lumen_radius_theta_amp_px,
            lumen_radius_frame_amp_px: phantom.lumen_radius_frame_amp_px,
            tissue_intensity: phantom.tissue_intensity,
            speckle_contrast: phantom.speckle_contrast,
            vessel_count: phantom.vessel_count,
            vessel_radius_min_px: phantom.vessel_radius_px.0,
            vessel_radius_max_px: phantom.vessel_radius_px.1,
            vessel_min_frames: phantom.vessel_min_frames,
            guidewire_width_alines: phantom.guidewire_width_alines,
            confounder_count: phantom.confounder_count,
            shifts: 0,
            increment: 55,
            roi_depth_px: pre.roi_depth_px,
            gauss_ksize: pre.gauss_ksize,
            gauss_sigma: pre.gauss_sigma,
            lumen_lambda: pre.lumen_lambda,
            lumen_max_step: pre.lumen_max_step,
            gw_window: pre.gw_window,
            seg_input_rows: 0,
            seg_input_cols: seg.input_cols,
            seg_resize_input: seg.resize_input,
            seg_channels: seg.encoder.iter().map(|&(c, _)| c).collect(),
            aspp_rates: seg.aspp_rates,
            aspp_channels: seg.aspp_channels,
            aspp_global: seg.aspp_global,
            decoder_channels: seg.decoder_channels,
            lr0: sched.lr0,
            drop_factor: sched.drop_factor,
            drop_period_epochs: sched.drop_period_epochs,
            max_epochs: sched.max_epochs,
            patience: sched.patience,
            min_rel_improve: sched.min_rel_improve,
            l2_lambda: sched.l2_lambda,
            batch_size: sched.batch_size,
            clf_max_epochs: sched.max_epochs,
            clf_batch_size: 16,
            min_blob_px: mvoct_core::candidates::MIN_BLOB_PX,
            link_max_dr_px: link.max_dr_px,
            link_max_dtheta_alines: link.max_dtheta_alines,
            min_track_frames: link.min_frames,
            ply_ring_step: 8,
            folds: 5,
            ratio_train: 0.70,
            ratio_val: 0.15,
            ratio_test: 0.15,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the config file (if any).
    pub fn load(config_path: Option<&Path>) -> Result<RunConfig> {
        match config_path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                // Overlay file keys onto defaults: unknown keys rejected.
                let mut value: serde_json::Value =
                    serde_json::to_value(RunConfig::default()).expect("defaults serialize");
                let file: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                let obj = file.as_object().ok_or_else(|| {
                    Error::Format(format!("{}: config must be a JSON object", p.display()))
                })?;
                let known = value.as_object().cloned().unwrap();
                for (k, v) in obj {
                    if !known.contains_key(k) {
                        return Err(Error::Config(format!(
                            "{}: unknown config key `{k}`",
                            p.display()
                        )));
                    }
                    value[k] = v.clone();
                }
                serde_json::from_value(value)
                    .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn phantom_params(&self) -> PhantomParams {
        PhantomParams {
            n_frames: self.frames,
            alines_per_frame: self.alines_per_frame,
            samples_per_aline: self.samples_per_aline,
            r_pixel_um: self.r_pixel_um,
            frame_spacing_mm: self.frame_spacing_mm,
            lumen_radius_mean_px: self.lumen_radius_mean_px,
            lumen_radius_theta_amp_px: self.lumen_radius_theta_amp_px,
            lumen_radius_frame_amp_px: self.lumen_radius_frame_amp_px,
            tissue_intensity: self.tissue_intensity,
            speckle_contrast: self.speckle_contrast,
            vessel_count: self.vessel_count,
            vessel_radius_px: (self.vessel_radius_min_px, self.vessel_radius_max_px),
            vessel_min_frames: self.vessel_min_frames,
            guidewire_width_alines: self.guidewire_width_alines,
            confounder_count: self.confounder_count,
            roi_depth_px: self.roi_depth_px,
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            roi_depth_px: self.roi_depth_px,
            gauss_ksize: self.gauss_ksize,
            gauss_sigma: self.gauss_sigma,
            lumen_lambda: self.lumen_lambda,
            lumen_max_step: self.lumen_max_step,
            gw_window: self.gw_window,
        }
    }

    /// Segmentation config; `rows` supplies the frame height when
    /// `seg_input_rows` is 0 (auto).
    pub fn seg_config(&self, rows: usize) -> SegConfig {
        SegConfig {
            input_rows: if self.seg_input_rows == 0 {
                rows
            } else {
                self.seg_input_rows
            },
            input_cols: self.seg_input_cols,
            resize_input: self.seg_resize_input,
            encoder: self.seg_channels.iter().map(|&c| (c, 2)).collect(),
            aspp_rates: self.aspp_rates.clone(),
            aspp_channels: self.aspp_channels,
            aspp_global: self.aspp_global,
            decoder_channels: self.decoder_channels.clone(),
            classes: 2,
        }
    }

    pub fn seg_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            lr0: self.lr0,
            drop_factor: self.drop_factor,
            drop_period_epochs: self.drop_period_epochs,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_rel_improve: self.min_rel_improve,
            l2_lambda: self.l2_lambda,
            batch_size: self.batch_size,
        }
    }

    pub fn clf_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            max_epochs: self.clf_max_epochs,
            batch_size: self.clf_batch_size,
            ..self.seg_schedule()
        }
    }

    pub fn link_config(&self) -> LinkConfig {
        LinkConfig {
            max_dr_px: self.link_max_dr_px,
            max_dtheta_alines: self.link_max_dtheta_alines,
            min_frames: self.min_track_frames,
        }
    }

    pub fn pipeline_config(&self, rows: usize) -> PipelineConfig {
        PipelineConfig {
            folds: self.folds,
            ratios: (self.ratio_train, self.ratio_val, self.ratio_test),
            augment_shifts: self.shifts,
            augment_increment: self.increment,
            preprocess: self.preprocess_config(),
            seg: self.seg_config(rows),
            seg_schedule: self.seg_schedule(),
            clf_schedule: self.clf_schedule(),
            link: self.link_config(),
            min_blob_px: self.min_blob_px,
        }
    }

    /// Writes the resolved configuration (plus seed) into the run directory.
    pub fn write_resolved(&self, out_dir: &Path, seed: u64, command: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Resolved<'a> {
            command: &'a str,
            seed: u64,
            #[serde(flatten)]
            config: &'a RunConfig,
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join("resolved_config.json");
        let json = serde_json::to_string_pretty(&Resolved {
            command,
            seed,
            config: self,
        })
        .expect("config serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
