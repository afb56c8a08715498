//! Offset-angle augmentation in the polar domain.
//!
//! All frames of a pullback are conceptually concatenated into one tall
//! (N·alines) × samples array of A-lines; new pullbacks are cut from it at
//! shifted starting A-lines. Every output A-line is a verbatim copy of exactly
//! one input A-line, so no data is lost or distorted. The trailing partial
//! frame wraps circularly to the start of the concatenated array, keeping the
//! frame count at N.

use serde::{Deserialize, Serialize};

use crate::imaging::{FrameMask, PolarFrame, PolarPullback};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub n_shifts: usize,
    pub increment_alines: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            n_shifts: 9,
            increment_alines: 55,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_shifts < 1 || self.increment_alines < 1 {
            return Err(Error::Config(
                "n_shifts and increment_alines must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// True when the largest shift exceeds one frame, so distinct shifts can
    /// alias onto the same re-cut. Callers should warn.
    pub fn aliases(&self, alines_per_frame: usize) -> bool {
        self.n_shifts * self.increment_alines > alines_per_frame
    }
}

/// Re-cuts a pullback (and aligned masks) from the concatenated A-line stream,
/// starting at `offset_alines`. Output has the same frame count; the final
/// partial frame is completed by wrapping to the stream start.
pub fn recut(
    p: &PolarPullback,
    masks: &[FrameMask],
    offset_alines: usize,
) -> (PolarPullback, Vec<FrameMask>) {
    let n_alines = p.meta.alines_per_frame;
    let n_samples = p.meta.samples_per_aline;
    let n_frames = p.frames.len();
    let total = n_frames * n_alines;
    if total == 0 {
        return (p.clone(), masks.to_vec());
    }

    let mut out_frames = Vec::with_capacity(n_frames);
    let mut out_masks = Vec::with_capacity(masks.len());
    for fi in 0..n_frames {
        let mut frame = PolarFrame::zeros(n_alines, n_samples);
        let mut mask = FrameMask::zeros(n_alines, n_samples);
        for a in 0..n_alines {
            let flat = (offset_alines + fi * n_alines + a) % total;
            let (src_f, src_a) = (flat / n_alines, flat % n_alines);
            frame
                .aline_mut(a)
                .copy_from_slice(p.frames[src_f].aline(src_a));
            if !masks.is_empty() {
                for r in 0..n_samples {
                    mask.set(a, r, masks[src_f].get(src_a, r));
                }
            }
        }
        out_frames.push(frame);
        if !masks.is_empty() {
            out_masks.push(mask);
        }
    }
    let out = PolarPullback {
        meta: p.meta.clone(),
        frames: out_frames,
        segment_id: p.segment_id.clone(),
    };
    (out, out_masks)
}

/// Produces `spec.n_shifts` augmented pullbacks; shift k uses offset
/// `k * increment_alines`.
pub fn offset_angle_augment(
    p: &PolarPullback,
    masks: &[FrameMask],
    spec: &AugmentSpec,
) -> Result<Vec<(PolarPullback, Vec<FrameMask>)>> {
    spec.validate()?;
    if !masks.is_empty() && masks.len() != p.frames.len() {
        return Err(Error::Contract(format!(
            "{} masks for {} frames",
            masks.len(),
            p.frames.len()
        )));
    }
    Ok((1..=spec.n_shifts)
        .map(|k| recut(p, masks, k * spec.increment_alines))
        .collect())
}
