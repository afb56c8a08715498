//! Pixel shifting, radial ROI crop, and Gaussian smoothing.

use crate::imaging::{FrameMask, PolarFrame};
use crate::{Error, Result};

use super::LumenContour;

/// Shifts each A-line left so the lumen boundary lands at column 0; the tail
/// is zero-padded. Returns the shifted frame and the per-A-line shift record.
pub fn pixel_shift(f: &PolarFrame, lumen: &LumenContour) -> (PolarFrame, Vec<usize>) {
    let (rows, cols) = (f.rows(), f.cols());
    assert_eq!(lumen.radius_px.len(), rows, "lumen contour length mismatch");
    let mut out = PolarFrame::zeros(rows, cols);
    for a in 0..rows {
        let s = lumen.radius_px[a].min(cols);
        let keep = cols - s;
        out.aline_mut(a)[..keep].copy_from_slice(&f.aline(a)[s..]);
    }
    (out, lumen.radius_px.clone())
}

/// Inverse of [`pixel_shift`] on the retained pixels; columns left of the
/// recorded shift (the discarded lumen/catheter region) come back as zeros.
pub fn unshift(shifted: &PolarFrame, shift_record: &[usize], original_cols: usize) -> PolarFrame {
    let rows = shifted.rows();
    let mut out = PolarFrame::zeros(rows, original_cols);
    for a in 0..rows {
        let s = shift_record[a].min(original_cols);
        let keep = (original_cols - s).min(shifted.cols());
        out.aline_mut(a)[s..s + keep].copy_from_slice(&shifted.aline(a)[..keep]);
    }
    out
}

/// Keeps radial columns [0, depth_px), zero-padding when the input is narrower.
pub fn crop_roi(f: &PolarFrame, depth_px: usize) -> PolarFrame {
    let rows = f.rows();
    let mut out = PolarFrame::zeros(rows, depth_px);
    let keep = depth_px.min(f.cols());
    for a in 0..rows {
        out.aline_mut(a)[..keep].copy_from_slice(&f.aline(a)[..keep]);
    }
    out
}

/// Same shift + crop applied to a label mask (shifts are integral, so labels
/// map exactly).
pub fn transform_mask(mask: &FrameMask, shift_record: &[usize], depth_px: usize) -> FrameMask {
    let rows = mask.rows();
    let cols = mask.cols();
    let mut out = FrameMask::zeros(rows, depth_px);
    for a in 0..rows {
        let s = shift_record[a];
        for j in 0..depth_px {
            let r = s + j;
            if r < cols && mask.get(a, r) == 1 {
                out.set(a, j, 1);
            }
        }
    }
    out
}

/// Maps a mask in shifted/cropped coordinates back onto raw frame coordinates.
pub fn untransform_mask(
    mask: &FrameMask,
    shift_record: &[usize],
    original_cols: usize,
) -> FrameMask {
    let rows = mask.rows();
    let mut out = FrameMask::zeros(rows, original_cols);
    for a in 0..rows {
        let s = shift_record[a];
        for j in 0..mask.cols() {
            if mask.get(a, j) == 1 {
                let r = s + j;
                if r < original_cols {
                    out.set(a, r, 1);
                }
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian kernel of odd length `ksize`.
pub fn gaussian_kernel(ksize: usize, sigma: f64) -> Vec<f64> {
    assert!(ksize % 2 == 1, "kernel size must be odd");
    let half = (ksize / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable 2-D Gaussian smoothing. θ (rows) wraps circularly; r (columns)
/// replicates the border.
pub fn gaussian_smooth(f: &PolarFrame, ksize: usize, sigma: f64) -> Result<PolarFrame> {
    if ksize % 2 == 0 {
        return Err(Error::Contract(format!("ksize must be odd, got {ksize}")));
    }
    let kernel = gaussian_kernel(ksize, sigma);
    debug_assert!((kernel.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    let (rows, cols) = (f.rows(), f.cols());
    let half = (ksize / 2) as isize;

    // Pass 1: along θ (rows), circular.
    let mut tmp = PolarFrame::zeros(rows, cols);
    for a in 0..rows {
        for (t, &kv) in kernel.iter().enumerate() {
            let sa = (a as isize + t as isize - half).rem_euclid(rows as isize) as usize;
            let src = f.aline(sa);
            let dst = tmp.aline_mut(a);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }

    // Pass 2: along r (columns), replicate borders.
    let mut out = PolarFrame::zeros(rows, cols);
    for a in 0..rows {
        let src = tmp.aline(a);
        let dst = out.aline_mut(a);
        for r in 0..cols {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let sr = (r as isize + t as isize - half).clamp(0, cols as isize - 1) as usize;
                acc += kv * src[sr];
            }
            dst[r] = acc;
        }
    }
    Ok(out)
}
