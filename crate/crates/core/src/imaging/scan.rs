//! Polar → Cartesian scan conversion (the anatomical view).

use super::{CartesianImage, PolarFrame, PullbackMeta};
use crate::{Error, Result};

/// Renders a polar frame into a square Cartesian image of `side_px` pixels.
///
/// Each output pixel center is mapped to (r, θ) and bilinearly interpolated
/// from the polar grid; θ interpolation wraps across the 0/2π seam; radii
/// beyond the sampled depth yield 0. Radial sample `i` sits at physical
/// radius `i * r_pixel_mm`, so the grid center maps exactly onto sample 0.
pub fn scan_convert(f: &PolarFrame, meta: &PullbackMeta, side_px: usize) -> Result<CartesianImage> {
    if side_px < 2 {
        return Err(Error::Contract(format!(
            "side_px must be >= 2, got {side_px}"
        )));
    }
    let n_alines = f.rows();
    let n_samples = f.cols();
    let r_max_mm = (n_samples - 1) as f64 * meta.r_pixel_mm();
    let mm_per_pixel = 2.0 * r_max_mm / side_px as f64;
    let center = (side_px - 1) as f64 / 2.0;
    let d_theta = std::f64::consts::TAU / n_alines as f64;

    let mut pixels = vec![0.0; side_px * side_px];
    for row in 0..side_px {
        let y = (row as f64 - center) * mm_per_pixel;
        for col in 0..side_px {
            let x = (col as f64 - center) * mm_per_pixel;
            let r = x.hypot(y);
            let rf = r / meta.r_pixel_mm();
            if rf > (n_samples - 1) as f64 {
                continue;
            }
            let mut theta = y.atan2(x);
            if theta < 0.0 {
                theta += std::f64::consts::TAU;
            }
            let af = theta / d_theta;

            let r0 = rf.floor() as usize;
            let r1 = (r0 + 1).min(n_samples - 1);
            let wr = rf - r0 as f64;
            let a0 = (af.floor() as usize) % n_alines;
            let a1 = (a0 + 1) % n_alines;
            let wa = af - af.floor();

            let v = (1.0 - wa) * ((1.0 - wr) * f.get(a0, r0) + wr * f.get(a0, r1))
                + wa * ((1.0 - wr) * f.get(a1, r0) + wr * f.get(a1, r1));
            pixels[row * side_px + col] = v;
        }
    }
    Ok(CartesianImage {
        side_px,
        mm_per_pixel,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::PolarFrame;

    fn meta(alines: usize) -> PullbackMeta {
        PullbackMeta {
            alines_per_frame: alines,
            samples_per_aline: 300,
            ..PullbackMeta::default()
        }
    }

    #[test]
    fn constant_frame_renders_constant_disk() {
        let m = meta(32);
        let c = 0.63;
        let f = PolarFrame::new(32, 300, vec![c; 32 * 300]).unwrap();
        let img = scan_convert(&f, &m, 101).unwrap();
        let r_max_mm = 299.0 * m.r_pixel_mm();
        let center = (img.side_px - 1) as f64 / 2.0;
        let mut inside = 0;
        let mut outside = 0;
        for row in 0..img.side_px {
            for col in 0..img.side_px {
                let x = (col as f64 - center) * img.mm_per_pixel;
                let y = (row as f64 - center) * img.mm_per_pixel;
                let r = x.hypot(y);
                let v = img.get(row, col);
                if r <= r_max_mm {
                    assert!((v - c).abs() <= 1e-6, "inside disk at ({row},{col}): {v}");
                    inside += 1;
                } else {
                    assert_eq!(v, 0.0, "outside disk at ({row},{col})");
                    outside += 1;
                }
            }
        }
        assert!(inside > 0 && outside > 0);
    }

    #[test]
    fn center_pixel_equals_r0_interpolant() {
        let m = meta(16);
        let mut f = PolarFrame::zeros(16, 300);
        for a in 0..16 {
            for r in 0..300 {
                f.set(a, r, ((a * 7 + r) % 13) as f64 / 13.0);
            }
        }
        // Odd side: a pixel sits exactly at the grid center, where rf = 0 and
        // θ = atan2(0,0) = 0, so interpolation reads exactly sample (0, 0).
        let img = scan_convert(&f, &m, 51).unwrap();
        let c = 25;
        assert!((img.get(c, c) - f.get(0, 0)).abs() < 1e-12);
    }

    /// Rotating the polar frame by a quarter turn of A-lines rotates the
    /// Cartesian output by 90 degrees exactly (matched grids, same samples).
    #[test]
    fn theta_rotation_equivariance_at_quarter_turn() {
        let n_alines = 64;
        let m = meta(n_alines);
        // Frame varying in θ only. Column r = 0 is one physical point for all
        // A-lines, so it must carry a single value.
        let f = {
            let mut f = PolarFrame::zeros(n_alines, 300);
            for a in 0..n_alines {
                let v = 0.5 + 0.4 * (a as f64 * 0.37).sin();
                f.set(a, 0, 0.5);
                for r in 1..300 {
                    f.set(a, r, v);
                }
            }
            f
        };
        let k = n_alines / 4; // exactly 90°
        let rotated = {
            let mut g = PolarFrame::zeros(n_alines, 300);
            for a in 0..n_alines {
                for r in 0..300 {
                    g.set(a, r, f.get((a + k) % n_alines, r));
                }
            }
            g
        };
        let side = 81;
        let base = scan_convert(&f, &m, side).unwrap();
        let rot = scan_convert(&rotated, &m, side).unwrap();
        // rotated(a) = f(a + k): the feature at angle θ+90° of f appears at θ,
        // i.e. the image content turns by -90°. With y downward-positive in
        // (row, col) space, θ increases with row; pixel (row, col) of `rot`
        // must equal pixel at +90° of `base`: (row', col') = (col, side-1-row).
        for row in 0..side {
            for col in 0..side {
                let want = base.get(col, side - 1 - row);
                let got = rot.get(row, col);
                assert!((want - got).abs() <= 1e-6, "({row},{col}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn side_too_small_is_contract_error() {
        let m = meta(16);
        let f = PolarFrame::zeros(16, 300);
        assert!(scan_convert(&f, &m, 1).is_err());
    }
}
