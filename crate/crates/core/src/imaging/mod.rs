//! Polar pullback data model, file I/O, and polar↔Cartesian geometry.
//!
//! A pullback is an ordered stack of polar frames. Frame rows are A-lines
//! (rotation angle θ, circular), columns are radial depth samples (r).
//! Intensities are kept as normalized reals in [0, 1]; on disk they are
//! 16-bit grayscale PGM.

mod io;
mod pgm;
mod scan;

pub use io::{load_pullback, save_pullback};
pub use pgm::{dequantize16, quantize16};
pub use scan::scan_convert;

use crate::{Error, Result};

/// Acquisition metadata shared by all frames of a pullback.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PullbackMeta {
    /// A-lines (rows) per frame. One full catheter rotation.
    pub alines_per_frame: usize,
    /// Radial samples (columns) per A-line.
    pub samples_per_aline: usize,
    /// Micrometers of tissue depth per radial sample.
    pub r_pixel_um: f64,
    /// Millimeters of pullback travel between consecutive frames
    /// (pullback speed divided by frame rate).
    pub frame_spacing_mm: f64,
    /// Radial samples occupied by the catheter at the start of each A-line.
    pub catheter_offset_px: usize,
}

impl Default for PullbackMeta {
    fn default() -> Self {
        Self {
            alines_per_frame: 496,
            samples_per_aline: 300,
            r_pixel_um: 5.0,
            frame_spacing_mm: 0.2,
            catheter_offset_px: 0,
        }
    }
}

impl PullbackMeta {
    pub fn validate(&self) -> Result<()> {
        if self.alines_per_frame < 8 {
            return Err(Error::Config(format!(
                "alines_per_frame must be >= 8, got {}",
                self.alines_per_frame
            )));
        }
        if self.samples_per_aline < 300 {
            return Err(Error::Config(format!(
                "samples_per_aline must be >= 300, got {}",
                self.samples_per_aline
            )));
        }
        if !(self.r_pixel_um > 0.0) || !(self.frame_spacing_mm > 0.0) {
            return Err(Error::Config(
                "r_pixel_um and frame_spacing_mm must be strictly positive".into(),
            ));
        }
        if self.catheter_offset_px >= self.samples_per_aline {
            return Err(Error::Config(format!(
                "catheter_offset_px {} exceeds samples_per_aline {}",
                self.catheter_offset_px, self.samples_per_aline
            )));
        }
        Ok(())
    }

    /// Millimeters per radial sample.
    pub fn r_pixel_mm(&self) -> f64 {
        self.r_pixel_um / 1000.0
    }

    /// Angular extent of one A-line in radians.
    pub fn d_theta_rad(&self) -> f64 {
        std::f64::consts::TAU / self.alines_per_frame as f64
    }
}

/// One polar frame: `rows = A-lines (θ)`, `cols = radial samples (r)`,
/// intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PolarFrame {
    /// Builds a frame, validating that every intensity is finite and in [0, 1].
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "frame data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::CorruptInput(format!(
                    "frame intensity {v} outside [0,1]"
                )));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, r: usize) -> f64 {
        self.data[a * self.cols + r]
    }

    #[inline]
    pub fn set(&mut self, a: usize, r: usize, v: f64) {
        self.data[a * self.cols + r] = v;
    }

    /// One A-line as a contiguous slice.
    #[inline]
    pub fn aline(&self, a: usize) -> &[f64] {
        &self.data[a * self.cols..(a + 1) * self.cols]
    }

    #[inline]
    pub fn aline_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.cols..(a + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// An ordered pullback of polar frames plus acquisition metadata.
#[derive(Debug, Clone)]
pub struct PolarPullback {
    pub meta: PullbackMeta,
    pub frames: Vec<PolarFrame>,
    /// Opaque id grouping frames of the same vessel segment for cross-validation.
    pub segment_id: String,
}

impl PolarPullback {
    pub fn new(meta: PullbackMeta, frames: Vec<PolarFrame>, segment_id: String) -> Result<Self> {
        meta.validate()?;
        for (i, f) in frames.iter().enumerate() {
            if f.rows() != meta.alines_per_frame || f.cols() != meta.samples_per_aline {
                return Err(Error::CorruptInput(format!(
                    "frame {} is {}x{}, metadata says {}x{}",
                    i,
                    f.rows(),
                    f.cols(),
                    meta.alines_per_frame,
                    meta.samples_per_aline
                )));
            }
        }
        Ok(Self {
            meta,
            frames,
            segment_id,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Per-frame binary label image, pixel-aligned with its frame.
/// 0 = other, 1 = microvessel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
}

impl FrameMask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            labels: vec![0; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::Contract(format!(
                "mask data length {} does not match {}x{}",
                labels.len(),
                rows,
                cols
            )));
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::CorruptInput("mask values must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, r: usize) -> u8 {
        self.labels[a * self.cols + r]
    }

    #[inline]
    pub fn set(&mut self, a: usize, r: usize, v: u8) {
        debug_assert!(v <= 1);
        self.labels[a * self.cols + r] = v;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn any_positive(&self) -> bool {
        self.labels.iter().any(|&v| v == 1)
    }
}

/// Square anatomical-view image produced by scan conversion.
/// The grid center maps to r = 0 (the catheter axis).
#[derive(Debug, Clone)]
pub struct CartesianImage {
    pub side_px: usize,
    pub mm_per_pixel: f64,
    pub pixels: Vec<f64>,
}

impl CartesianImage {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side_px + col]
    }
}
