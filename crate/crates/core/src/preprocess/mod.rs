//! Frame pre-processing: guidewire shadow removal, lumen detection, pixel
//! shifting, radial ROI crop, and Gaussian smoothing — plus the geometric
//! bookkeeping to map network predictions back onto raw polar coordinates.

mod filters;
mod guidewire;
mod lumen;

pub use filters::{
    crop_roi, gaussian_kernel, gaussian_smooth, pixel_shift, transform_mask, unshift,
    untransform_mask,
};
pub use guidewire::detect_guidewire;
pub use lumen::{detect_lumen, otsu_threshold};

use serde::{Deserialize, Serialize};

use crate::imaging::{FrameMask, PolarFrame, PullbackMeta};
use crate::Result;

/// Circular A-line interval `[start, start+width)` over θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngularInterval {
    pub start_aline: usize,
    pub width_alines: usize,
}

impl AngularInterval {
    /// One past the last covered A-line, modulo the frame height.
    pub fn end_aline(&self, alines_per_frame: usize) -> usize {
        (self.start_aline + self.width_alines) % alines_per_frame
    }

    pub fn contains(&self, a: usize, alines_per_frame: usize) -> bool {
        (a as isize - self.start_aline as isize).rem_euclid(alines_per_frame as isize)
            < self.width_alines as isize
    }
}

/// Per-A-line radial index of the lumen boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LumenContour {
    pub radius_px: Vec<usize>,
}

/// Tuning knobs for the pre-processing stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Radial ROI depth kept after pixel shifting.
    pub roi_depth_px: usize,
    pub gauss_ksize: usize,
    pub gauss_sigma: f64,
    /// Smoothness weight λ of the lumen DP.
    pub lumen_lambda: f64,
    /// Hard per-step limit |r_a − r_{a−1}| of the lumen DP.
    pub lumen_max_step: usize,
    /// Maximum half-width, in A-lines, of the guidewire band search.
    pub gw_window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            roi_depth_px: 300,
            gauss_ksize: 7,
            gauss_sigma: 1.0,
            lumen_lambda: 0.5,
            lumen_max_step: 15,
            gw_window: 40,
        }
    }
}

/// A network-ready frame plus the transform needed to map predictions back.
#[derive(Debug, Clone)]
pub struct PreprocessedFrame {
    /// alines × roi_depth pixels, shifted/cropped/smoothed, shadow zeroed.
    pub pixels: PolarFrame,
    /// Per-A-line shift applied (the detected lumen radius).
    pub shift_record: Vec<usize>,
    /// Detected guidewire shadow, when any.
    pub shadow: Option<AngularInterval>,
    /// Per-A-line exclusion flags (true = shadow A-line, no loss, forced
    /// background at inference).
    pub excluded_alines: Vec<bool>,
}

impl PreprocessedFrame {
    pub fn rows(&self) -> usize {
        self.pixels.rows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.cols()
    }

    pub fn is_excluded(&self, a: usize) -> bool {
        self.excluded_alines[a]
    }

    /// Row-major per-pixel exclusion flags (shadow A-lines excluded).
    pub fn excluded_flat(&self) -> Vec<bool> {
        let cols = self.cols();
        let mut out = vec![false; self.rows() * cols];
        for (a, &ex) in self.excluded_alines.iter().enumerate() {
            if ex {
                out[a * cols..(a + 1) * cols]
                    .iter_mut()
                    .for_each(|v| *v = true);
            }
        }
        out
    }
}

/// Full pre-processing chain for one frame: guidewire detection → lumen
/// detection → pixel shift → ROI crop → Gaussian smoothing → shadow zeroing.
pub fn preprocess_frame(
    f: &PolarFrame,
    meta: &PullbackMeta,
    cfg: &PreprocessConfig,
) -> Result<PreprocessedFrame> {
    let shadow = detect_guidewire(f, None, meta.catheter_offset_px, cfg);
    let lumen = detect_lumen(f, shadow.as_ref(), meta.catheter_offset_px, cfg)?;
    let (shifted, shift_record) = pixel_shift(f, &lumen);
    let cropped = crop_roi(&shifted, cfg.roi_depth_px);
    let mut smoothed = gaussian_smooth(&cropped, cfg.gauss_ksize, cfg.gauss_sigma)?;

    let rows = f.rows();
    let mut excluded_alines = vec![false; rows];
    if let Some(s) = shadow {
        for a in 0..rows {
            if s.contains(a, rows) {
                excluded_alines[a] = true;
                smoothed.aline_mut(a).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    Ok(PreprocessedFrame {
        pixels: smoothed,
        shift_record,
        shadow,
        excluded_alines,
    })
}

/// Co-transforms a ground-truth mask through the same shift and crop recorded
/// for its frame.
pub fn preprocess_mask(mask: &FrameMask, pf: &PreprocessedFrame) -> FrameMask {
    transform_mask(mask, &pf.shift_record, pf.cols())
}
