//! Guidewire shadow detection.
//!
//! The shadow is the contiguous circular band of A-lines whose summed
//! intensity beyond the lumen collapses. The band is found from a smoothed
//! per-A-line energy profile: global minimum, then expansion to both sides
//! until the energy recovers past the midpoint between the band minimum and
//! the background level.

use crate::imaging::PolarFrame;

use super::lumen::otsu_threshold;
use super::{AngularInterval, LumenContour, PreprocessConfig};

/// Per-A-line energy beyond the (provided or estimated) lumen boundary.
fn energy_profile(
    f: &PolarFrame,
    lumen: Option<&LumenContour>,
    catheter_offset: usize,
) -> Vec<f64> {
    let rows = f.rows();
    let cols = f.cols();
    let mut energy = vec![0.0; rows];
    match lumen {
        Some(l) => {
            for a in 0..rows {
                let from = l.radius_px[a].min(cols);
                energy[a] = f.aline(a)[from..].iter().sum();
            }
        }
        None => {
            // Rough boundary estimate: first sample past the catheter that
            // exceeds an Otsu threshold. A-lines with no crossing (dark, as
            // under the shadow) sum from the catheter offset.
            let thr = otsu_threshold(f.as_slice());
            for a in 0..rows {
                let line = f.aline(a);
                let from = line[catheter_offset..]
                    .iter()
                    .position(|&v| v > thr)
                    .map(|i| i + catheter_offset)
                    .unwrap_or(catheter_offset);
                energy[a] = line[from..].iter().sum();
            }
        }
    }
    energy
}

fn circular_moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = (window / 2) as isize;
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for d in -half..=half {
                s += x[(i as isize + d).rem_euclid(n as isize) as usize];
            }
            s / window as f64
        })
        .collect()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Detects the guidewire shadow band, or returns `None` when no band stands
/// out (the band's mean energy must fall below half the median A-line energy).
pub fn detect_guidewire(
    f: &PolarFrame,
    lumen: Option<&LumenContour>,
    catheter_offset: usize,
    cfg: &PreprocessConfig,
) -> Option<AngularInterval> {
    let rows = f.rows();
    if rows < 8 {
        return None;
    }
    let energy = energy_profile(f, lumen, catheter_offset);
    let smoothed = circular_moving_average(&energy, 5);

    let background = median(&smoothed);
    let (a_min, &e_min) = smoothed
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let threshold = 0.5 * (e_min + background);

    // Expand from the minimum while the energy stays below the midpoint.
    let mut left = 0usize;
    while left < cfg.gw_window {
        let a = (a_min + rows - left - 1) % rows;
        if smoothed[a] < threshold {
            left += 1;
        } else {
            break;
        }
    }
    let mut right = 0usize;
    while right < cfg.gw_window {
        let a = (a_min + right + 1) % rows;
        if smoothed[a] < threshold {
            right += 1;
        } else {
            break;
        }
    }

    let start = (a_min + rows - left) % rows;
    let width = (left + right + 1).min(rows);
    let band_mean: f64 = (0..width)
        .map(|i| smoothed[(start + i) % rows])
        .sum::<f64>()
        / width as f64;

    if band_mean < 0.5 * background {
        Some(AngularInterval {
            start_aline: start,
            width_alines: width,
        })
    } else {
        None
    }
}
