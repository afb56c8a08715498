//! Lumen boundary detection by circular dynamic programming.
//!
//! Per A-line candidates come from an Otsu threshold crossing; the contour
//! itself minimizes Σ −gradient(a, r_a) + λ·|r_a − r_{a−1}| over the circle,
//! with a hard per-step limit. The cycle is closed exactly by anchoring the
//! DP at the most reliable A-line and pinning both ends of the unrolled
//! sequence to the same radius.

use crate::imaging::PolarFrame;
use crate::{Error, Result};

use super::{AngularInterval, LumenContour, PreprocessConfig};

/// Otsu's threshold over raw intensity values (256-bin histogram on [0, 1]).
pub fn otsu_threshold(values: &[f64]) -> f64 {
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = ((v * (BINS as f64 - 1.0)).round() as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = values.len() as u64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best_t = 0usize;
    let mut best_var = -1.0;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for t in 0..BINS {
        w0 += hist[t];
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best_var {
            best_var = between;
            best_t = t;
        }
    }
    best_t as f64 / (BINS as f64 - 1.0)
}

/// Radial step gradient g[a][r] = I[a][r] − I[a][r−1]. Kept unsmoothed so the
/// boundary edge stays sharp against the λ·|Δr| smoothness cost.
fn radial_gradient(f: &PolarFrame) -> Vec<f64> {
    let (rows, cols) = (f.rows(), f.cols());
    let mut g = vec![0.0; rows * cols];
    for a in 0..rows {
        let line = f.aline(a);
        for r in 1..cols {
            g[a * cols + r] = line[r] - line[r - 1];
        }
        g[a * cols] = line[0];
    }
    g
}

/// Detects the lumen boundary contour. Under a provided shadow band the
/// contour is linearly interpolated between the band edges.
pub fn detect_lumen(
    f: &PolarFrame,
    shadow: Option<&AngularInterval>,
    catheter_offset: usize,
    cfg: &PreprocessConfig,
) -> Result<LumenContour> {
    let rows = f.rows();
    let cols = f.cols();
    let thr = otsu_threshold(f.as_slice());

    // Candidate boundary per A-line: first above-threshold sample past the
    // catheter. Degenerate frames (no candidate on most A-lines) are refused.
    let mut miss = 0usize;
    for a in 0..rows {
        if !f.aline(a)[catheter_offset..].iter().any(|&v| v > thr) {
            miss += 1;
        }
    }
    if miss * 2 > rows {
        return Err(Error::Detection(format!(
            "no above-threshold sample on {miss}/{rows} A-lines"
        )));
    }

    let g = radial_gradient(f);
    let in_shadow = |a: usize| -> bool {
        shadow.map_or(false, |s| {
            (a as isize - s.start_aline as isize).rem_euclid(rows as isize)
                < s.width_alines as isize
        })
    };

    // Anchor: the A-line (outside the shadow) with the strongest gradient.
    let mut anchor = 0usize;
    let mut anchor_strength = f64::NEG_INFINITY;
    for a in 0..rows {
        if in_shadow(a) {
            continue;
        }
        let best = g[a * cols + catheter_offset..(a + 1) * cols]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if best > anchor_strength {
            anchor_strength = best;
            anchor = a;
        }
    }

    // Anchor radii: top local gradient maxima on the anchor line.
    let mut anchor_candidates: Vec<(f64, usize)> = (catheter_offset..cols)
        .map(|r| (g[anchor * cols + r], r))
        .collect();
    anchor_candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut anchor_radii: Vec<usize> = Vec::new();
    for (_, r) in anchor_candidates {
        if anchor_radii.iter().all(|&q| q.abs_diff(r) > 3) {
            anchor_radii.push(r);
        }
        if anchor_radii.len() == 4 {
            break;
        }
    }

    let max_step = cfg.lumen_max_step as isize;
    let lambda = cfg.lumen_lambda;
    // Small pull toward the innermost strong edge; breaks flat-cost ties.
    let tie = 1e-6;

    let mut best_cost = f64::INFINITY;
    let mut best_path: Option<Vec<usize>> = None;

    for &r0 in &anchor_radii {
        // Unrolled stages: a = anchor, anchor+1, …, anchor+rows-1, then a
        // closing transition back to radius r0.
        let n_states = cols - catheter_offset;
        let state_r = |s: usize| s + catheter_offset;
        let mut cost = vec![f64::INFINITY; n_states];
        let mut back: Vec<Vec<u32>> = Vec::with_capacity(rows);
        cost[r0 - catheter_offset] = -g[anchor * cols + r0] + tie * r0 as f64;

        for step in 1..rows {
            let a = (anchor + step) % rows;
            let mut next = vec![f64::INFINITY; n_states];
            let mut bp = vec![0u32; n_states];
            for s in 0..n_states {
                let r = state_r(s);
                let node = -g[a * cols + r] + tie * r as f64;
                let lo = (s as isize - max_step).max(0) as usize;
                let hi = ((s as isize + max_step) as usize).min(n_states - 1);
                let mut best = f64::INFINITY;
                let mut arg = lo;
                for ps in lo..=hi {
                    let c = cost[ps] + lambda * (ps.abs_diff(s)) as f64;
                    if c < best {
                        best = c;
                        arg = ps;
                    }
                }
                next[s] = best + node;
                bp[s] = arg as u32;
            }
            cost = next;
            back.push(bp);
        }

        // Closing transition to the anchor radius.
        let s0 = r0 - catheter_offset;
        let lo = (s0 as isize - max_step).max(0) as usize;
        let hi = ((s0 as isize + max_step) as usize).min(n_states - 1);
        let mut close_best = f64::INFINITY;
        let mut close_arg = lo;
        for ps in lo..=hi {
            let c = cost[ps] + lambda * (ps.abs_diff(s0)) as f64;
            if c < close_best {
                close_best = c;
                close_arg = ps;
            }
        }

        if close_best < best_cost {
            best_cost = close_best;
            // Backtrack: radius per unrolled step.
            let mut path_states = vec![0usize; rows];
            path_states[rows - 1] = close_arg;
            for step in (1..rows).rev() {
                path_states[step - 1] = back[step - 1][path_states[step]] as usize;
            }
            let mut radii = vec![0usize; rows];
            for (step, &s) in path_states.iter().enumerate() {
                radii[(anchor + step) % rows] = state_r(s);
            }
            best_path = Some(radii);
        }
    }

    let mut radii =
        best_path.ok_or_else(|| Error::Detection("no feasible lumen contour".into()))?;

    // Interpolate under the shadow band between its edge values.
    if let Some(s) = shadow {
        if s.width_alines < rows {
            let left = (s.start_aline + rows - 1) % rows;
            let right = (s.start_aline + s.width_alines) % rows;
            let rl = radii[left] as f64;
            let rr = radii[right] as f64;
            let span = (s.width_alines + 1) as f64;
            for i in 0..s.width_alines {
                let a = (s.start_aline + i) % rows;
                let t = (i + 1) as f64 / span;
                radii[a] = ((1.0 - t) * rl + t * rr).round() as usize;
            }
        }
    }

    Ok(LumenContour { radius_px: radii })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomParams};

    #[test]
    fn all_zero_frame_is_detection_error() {
        let f = PolarFrame::zeros(64, 300);
        let err = detect_lumen(&f, None, 0, &PreprocessConfig::default());
        assert!(matches!(err, Err(Error::Detection(_))));
    }

    fn phantom_params(theta_amp: f64, frame_amp: f64) -> PhantomParams {
        PhantomParams {
            n_frames: 4,
            alines_per_frame: 64,
            samples_per_aline: 320,
            lumen_radius_mean_px: 80.0,
            lumen_radius_theta_amp_px: theta_amp,
            lumen_radius_frame_amp_px: frame_amp,
            vessel_count: 1,
            vessel_min_frames: 3,
            guidewire_width_alines: 8,
            confounder_count: 0,
            ..PhantomParams::default()
        }
    }

    #[test]
    fn constant_radius_detected_within_two_pixels() {
        let params = phantom_params(0.0, 0.0);
        let (pb, gt) = generate_phantom(&params, 11).unwrap();
        let cfg = PreprocessConfig::default();
        for (fi, frame) in pb.frames.iter().enumerate() {
            let shadow = AngularInterval {
                start_aline: gt.shadow_band[fi].0,
                width_alines: gt.shadow_band[fi].1,
            };
            let contour = detect_lumen(frame, Some(&shadow), 0, &cfg).unwrap();
            for a in 0..64 {
                let err = (contour.radius_px[a] as f64 - gt.lumen_radius[fi][a] as f64).abs();
                assert!(err <= 2.0, "frame {fi} aline {a}: err {err}");
            }
        }
    }

    #[test]
    fn sinusoidal_radius_mae_within_two_pixels() {
        let params = phantom_params(10.0, 0.0);
        let (pb, gt) = generate_phantom(&params, 12).unwrap();
        let cfg = PreprocessConfig::default();
        let mut abs_err = 0.0;
        let mut count = 0usize;
        for (fi, frame) in pb.frames.iter().enumerate() {
            let shadow = AngularInterval {
                start_aline: gt.shadow_band[fi].0,
                width_alines: gt.shadow_band[fi].1,
            };
            let contour = detect_lumen(frame, Some(&shadow), 0, &cfg).unwrap();
            for a in 0..64 {
                abs_err += (contour.radius_px[a] as f64 - gt.lumen_radius[fi][a] as f64).abs();
                count += 1;
            }
        }
        let mae = abs_err / count as f64;
        assert!(mae <= 2.0, "MAE {mae}");
    }

    #[test]
    fn smoothness_constraint_holds_including_seam() {
        let params = phantom_params(8.0, 3.0);
        let (pb, gt) = generate_phantom(&params, 13).unwrap();
        let cfg = PreprocessConfig::default();
        let shadow = AngularInterval {
            start_aline: gt.shadow_band[0].0,
            width_alines: gt.shadow_band[0].1,
        };
        let contour = detect_lumen(&pb.frames[0], Some(&shadow), 0, &cfg).unwrap();
        for a in 0..64 {
            let prev = contour.radius_px[(a + 63) % 64];
            let cur = contour.radius_px[a];
            assert!(
                prev.abs_diff(cur) <= cfg.lumen_max_step,
                "step at {a}: {prev} -> {cur}"
            );
        }
    }
}
