//! Class-weighted softmax cross-entropy and class-weight computation.

use super::tensor::Tensor4;
use crate::{Error, Result};

/// Per-pixel softmax over the channel axis. Numerically stable; outputs sum
/// to 1 per pixel and are strictly positive.
pub fn softmax_probs(logits: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = logits.shape();
    let mut out = Tensor4::zeros(n, c, h, w);
    let hw = h * w;
    for ni in 0..n {
        for p in 0..hw {
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(logits.plane(ni, ci)[p]);
            }
            let mut denom = 0.0;
            for ci in 0..c {
                denom += (logits.plane(ni, ci)[p] - maxv).exp();
            }
            for ci in 0..c {
                out.plane_mut(ni, ci)[p] = (logits.plane(ni, ci)[p] - maxv).exp() / denom;
            }
        }
    }
    out
}

/// Mean class-weighted softmax cross-entropy over non-excluded pixels.
///
/// * `logits`: (n, classes, h, w)
/// * `labels`: n*h*w class indices, row-major per sample
/// * `excluded`: n*h*w flags; excluded pixels carry no loss and no gradient
/// * `weights`: per-class positive loss weights
///
/// Returns the scalar loss and its gradient with respect to the logits.
/// With every pixel excluded the loss and gradient are zero.
pub fn weighted_softmax_ce(
    logits: &Tensor4,
    labels: &[u8],
    excluded: &[bool],
    weights: &[f64],
) -> Result<(f64, Tensor4)> {
    let (n, c, h, w) = logits.shape();
    let hw = h * w;
    if labels.len() != n * hw || excluded.len() != n * hw {
        return Err(Error::Contract(format!(
            "labels/excluded length {} does not match {}x{}x{}",
            labels.len(),
            n,
            h,
            w
        )));
    }
    if weights.len() != c || weights.iter().any(|&wv| !(wv > 0.0)) {
        return Err(Error::Contract("class weights must be positive".into()));
    }

    let included = excluded.iter().filter(|&&e| !e).count();
    let mut grad = Tensor4::zeros(n, c, h, w);
    if included == 0 {
        return Ok((0.0, grad));
    }
    let inv_m = 1.0 / included as f64;

    let mut loss = 0.0;
    for ni in 0..n {
        for p in 0..hw {
            let flat = ni * hw + p;
            if excluded[flat] {
                continue;
            }
            let y = labels[flat] as usize;
            debug_assert!(y < c);
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(logits.plane(ni, ci)[p]);
            }
            let mut denom = 0.0;
            for ci in 0..c {
                denom += (logits.plane(ni, ci)[p] - maxv).exp();
            }
            let wy = weights[y];
            let log_py = logits.plane(ni, y)[p] - maxv - denom.ln();
            loss -= wy * log_py;
            for ci in 0..c {
                let pc = (logits.plane(ni, ci)[p] - maxv).exp() / denom;
                let indicator = if ci == y { 1.0 } else { 0.0 };
                grad.plane_mut(ni, ci)[p] = wy * (pc - indicator) * inv_m;
            }
        }
    }
    Ok((loss * inv_m, grad))
}

/// Inverse-median-frequency class weights:
/// `freq_c = count_c / Σ counts`, `w_c = median(freq) / freq_c`.
pub fn median_frequency_weights(class_pixel_counts: &[u64]) -> Result<Vec<f64>> {
    if let Some(zero_class) = class_pixel_counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!(
            "class {zero_class} has zero pixels; cannot compute median-frequency weights"
        )));
    }
    let total: u64 = class_pixel_counts.iter().sum();
    let freqs: Vec<f64> = class_pixel_counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    let mut sorted = freqs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(freqs.iter().map(|&f| median / f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_positive() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(9, 0);
        let data: Vec<f64> = (0..2 * 2 * 3 * 3)
            .map(|_| rng.gen::<f64>() * 20.0 - 10.0)
            .collect();
        let logits = Tensor4::from_vec(2, 2, 3, 3, data);
        let probs = softmax_probs(&logits);
        for ni in 0..2 {
            for p in 0..9 {
                let s = probs.plane(ni, 0)[p] + probs.plane(ni, 1)[p];
                assert!((s - 1.0).abs() <= 1e-9);
                assert!(probs.plane(ni, 0)[p] > 0.0 && probs.plane(ni, 1)[p] > 0.0);
            }
        }
    }

    #[test]
    fn perfect_logits_drive_loss_to_zero() {
        // Large positive margin toward the true class.
        let logits = Tensor4::from_vec(1, 2, 1, 2, vec![100.0, -100.0, -100.0, 100.0]);
        let labels = vec![0u8, 1];
        let excluded = vec![false, false];
        let (loss, _) = weighted_softmax_ce(&logits, &labels, &excluded, &[1.0, 1.0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn uniform_logits_give_weighted_ln2() {
        let logits = Tensor4::zeros(1, 2, 1, 1);
        let w = [0.7, 3.0];
        for class in 0..2u8 {
            let (loss, _) = weighted_softmax_ce(&logits, &[class], &[false], &w).unwrap();
            let expect = w[class as usize] * std::f64::consts::LN_2;
            assert!((loss - expect).abs() < 1e-12, "class {class}");
        }
    }

    #[test]
    fn all_excluded_gives_zero_loss_and_gradient() {
        let logits = Tensor4::from_vec(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let (loss, grad) =
            weighted_softmax_ce(&logits, &[0, 1], &[true, true], &[1.0, 1.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn median_frequency_weights_match_direct_arithmetic() {
        let w = median_frequency_weights(&[900, 100]).unwrap();
        assert!((w[0] - 0.5 / 0.9).abs() < 1e-12); // 0.5556
        assert!((w[1] - 5.0).abs() < 1e-12);
        assert!((w[0] - 0.5556).abs() < 1e-4);
    }

    #[test]
    fn equal_counts_give_unit_weights() {
        let w = median_frequency_weights(&[250, 250]).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn minority_class_gets_weight_above_one() {
        // Any split where microvessel is the minority: w_mv > 1 > w_bg.
        for mv in [1u64, 10, 100, 1000] {
            let bg = 2812 * 100;
            let w = median_frequency_weights(&[bg, mv]).unwrap();
            assert!(w[1] > 1.0 && w[0] < 1.0, "mv={mv}: {w:?}");
        }
    }

    #[test]
    fn zero_count_class_is_reported() {
        let err = median_frequency_weights(&[10, 0]).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }
}
