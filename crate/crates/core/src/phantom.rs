//! Synthetic pullback generator with exact ground truth.
//!
//! Renders polar frames with a dark lumen interior, a bright boundary ridge,
//! multiplicative-speckle tissue, a guidewire shadow band, dark elliptical
//! microvessels that persist across consecutive frames, and confounders
//! (side-branch-like notches opening from the lumen, bright calcification-like
//! blobs) that exercise the candidate classifier's negative class.
//!
//! Generation is a pure function of (params, seed). Global placement decisions
//! are drawn from one stream; per-frame speckle uses a per-frame derived
//! stream, so frames can be rendered in parallel with bit-identical results.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{FrameMask, PolarFrame, PolarPullback, PullbackMeta};
use crate::rng::stream_rng;
use crate::{Error, Result};

const STREAM_GLOBAL: u64 = 1;
const STREAM_FRAME_BASE: u64 = 0x1000_0000;

/// Ridge thickness of the rendered lumen boundary, in radial samples.
const RIDGE_W: usize = 3;
/// Minimum radial gap between any vessel pixel and the lumen boundary ridge.
const VESSEL_GAP: usize = 3;
/// Intensity multiplier inside vessels and the guidewire shadow.
const VESSEL_ATT: f64 = 0.05;
const SHADOW_ATT: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub n_frames: usize,
    pub alines_per_frame: usize,
    pub samples_per_aline: usize,
    pub r_pixel_um: f64,
    pub frame_spacing_mm: f64,
    /// Mean lumen radius in radial samples.
    pub lumen_radius_mean_px: f64,
    /// Sinusoidal lumen radius variation across θ.
    pub lumen_radius_theta_amp_px: f64,
    /// Sinusoidal lumen radius variation across frames.
    pub lumen_radius_frame_amp_px: f64,
    /// Mean tissue intensity μ_t.
    pub tissue_intensity: f64,
    /// Speckle contrast in [0, 1]: 0 = constant tissue, 1 = full
    /// exponential speckle.
    pub speckle_contrast: f64,
    pub vessel_count: usize,
    /// Semi-axis range (min, max) for vessel ellipses, radial samples.
    pub vessel_radius_px: (f64, f64),
    /// Every vessel spans at least this many consecutive frames.
    pub vessel_min_frames: usize,
    pub guidewire_width_alines: usize,
    /// Side-branch notches and bright calcification-like blobs (negatives
    /// for the candidate classifier).
    pub confounder_count: usize,
    /// Radial ROI depth the downstream crop will keep; vessels are placed
    /// so they survive pixel shifting plus this crop.
    pub roi_depth_px: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            n_frames: 50,
            alines_per_frame: 496,
            samples_per_aline: 320,
            r_pixel_um: 5.0,
            frame_spacing_mm: 0.2,
            lumen_radius_mean_px: 80.0,
            lumen_radius_theta_amp_px: 6.0,
            lumen_radius_frame_amp_px: 4.0,
            tissue_intensity: 0.35,
            speckle_contrast: 1.0,
            vessel_count: 3,
            vessel_radius_px: (2.0, 6.0),
            vessel_min_frames: 4,
            guidewire_width_alines: 30,
            confounder_count: 2,
            roi_depth_px: 300,
        }
    }
}

impl PhantomParams {
    pub fn meta(&self) -> PullbackMeta {
        PullbackMeta {
            alines_per_frame: self.alines_per_frame,
            samples_per_aline: self.samples_per_aline,
            r_pixel_um: self.r_pixel_um,
            frame_spacing_mm: self.frame_spacing_mm,
            catheter_offset_px: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.meta().validate()?;
        if self.n_frames == 0 {
            return Err(Error::Params("n_frames must be >= 1".into()));
        }
        if self.vessel_min_frames == 0 || self.vessel_min_frames > self.n_frames {
            return Err(Error::Params(format!(
                "vessel_min_frames {} not in 1..={}",
                self.vessel_min_frames, self.n_frames
            )));
        }
        if !(0.0..=1.0).contains(&self.speckle_contrast) {
            return Err(Error::Params("speckle_contrast must be in [0,1]".into()));
        }
        if !(self.tissue_intensity > 0.0 && self.tissue_intensity < 1.0) {
            return Err(Error::Params("tissue_intensity must be in (0,1)".into()));
        }
        let (rmin, rmax) = self.vessel_radius_px;
        if !(rmin > 0.0 && rmax >= rmin) {
            return Err(Error::Params("vessel_radius_px range is invalid".into()));
        }
        if self.guidewire_width_alines + 4 >= self.alines_per_frame {
            return Err(Error::Params(
                "guidewire shadow covers nearly the whole frame".into(),
            ));
        }
        let (lo, hi) = self.vessel_center_radial_range();
        if self.vessel_count > 0 && lo > hi {
            return Err(Error::Params(format!(
                "no radial room for vessels: centers would need [{lo:.1}, {hi:.1}] \
                 between lumen and ROI depth"
            )));
        }
        Ok(())
    }

    fn lumen_max(&self) -> f64 {
        self.lumen_radius_mean_px + self.lumen_radius_theta_amp_px + self.lumen_radius_frame_amp_px
    }

    fn lumen_min(&self) -> f64 {
        self.lumen_radius_mean_px - self.lumen_radius_theta_amp_px - self.lumen_radius_frame_amp_px
    }

    /// Allowed radial range for vessel centers. Vessels must clear the lumen
    /// ridge by `VESSEL_GAP` even at maximum lumen radius, and must stay
    /// inside the ROI after pixel shifting by the lumen radius.
    fn vessel_center_radial_range(&self) -> (f64, f64) {
        let s_max = self.vessel_radius_px.1;
        let lo = self.lumen_max() + (RIDGE_W + VESSEL_GAP) as f64 + s_max + 3.0;
        let hi_roi = self.lumen_min() + self.roi_depth_px as f64 - s_max - 6.0;
        let hi_img = (self.samples_per_aline - 2) as f64 - s_max - 3.0;
        (lo, hi_roi.min(hi_img))
    }
}

/// One vessel cross-section in the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthNode {
    pub frame: usize,
    pub center_a: f64,
    pub center_r: f64,
    pub semi_a: f64,
    pub semi_r: f64,
    /// Rasterized pixel count of this cross-section.
    pub area_px: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfounderKind {
    /// Dark pocket opening from the lumen (side-branch-like).
    Notch,
    /// Bright blob inside tissue (calcification-like).
    Calcification,
}

/// A rendered non-vessel structure, recorded so the classifier can harvest
/// genuine negative patches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfounderBlob {
    pub frame: usize,
    pub kind: ConfounderKind,
    /// Pixels in raw polar coordinates (a, r).
    pub pixels: Vec<(u32, u32)>,
}

/// Everything the generator knows about a phantom pullback.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Vessel masks, one per frame, pixel-aligned with the frames.
    pub masks: Vec<FrameMask>,
    /// Lumen boundary index per frame per A-line.
    pub lumen_radius: Vec<Vec<u32>>,
    /// Guidewire shadow (start A-line, width) per frame.
    pub shadow_band: Vec<(usize, usize)>,
    /// One chain of cross-sections per generated vessel.
    pub vessel_tracks: Vec<Vec<TruthNode>>,
    pub confounders: Vec<ConfounderBlob>,
}

/// The `truth.json` sidecar: everything in [`GroundTruth`] except the masks,
/// which live in the pullback directory as `mask_%05d.pgm`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub lumen_radius: Vec<Vec<u32>>,
    pub shadow_band: Vec<(usize, usize)>,
    pub vessel_tracks: Vec<Vec<TruthNode>>,
    pub confounders: Vec<ConfounderBlob>,
}

impl GroundTruth {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = TruthFile {
            lumen_radius: self.lumen_radius.clone(),
            shadow_band: self.shadow_band.clone(),
            vessel_tracks: self.vessel_tracks.clone(),
            confounders: self.confounders.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Format(format!("truth encode: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path, masks: Vec<FrameMask>) -> Result<GroundTruth> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TruthFile = serde_json::from_str(&json)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if file.lumen_radius.len() != masks.len() {
            return Err(Error::CorruptInput(format!(
                "{}: truth covers {} frames, directory has {} masks",
                path.display(),
                file.lumen_radius.len(),
                masks.len()
            )));
        }
        Ok(GroundTruth {
            masks,
            lumen_radius: file.lumen_radius,
            shadow_band: file.shadow_band,
            vessel_tracks: file.vessel_tracks,
            confounders: file.confounders,
        })
    }
}

#[derive(Debug, Clone)]
struct VesselPlan {
    start_frame: usize,
    nodes: Vec<(f64, f64)>, // (center_a, center_r) per covered frame
    semi_a: f64,
    semi_r: f64,
    /// θ footprint (semi-axis + wander) in A-lines, for placement spacing.
    margin_alines: usize,
}

#[derive(Debug, Clone)]
struct ConfounderPlan {
    frame: usize,
    kind: ConfounderKind,
    center_a: usize,
    width_alines: usize,
    depth_px: usize,
    center_r: f64,
}

/// Deterministically generates a phantom pullback and its ground truth.
pub fn generate_phantom(params: &PhantomParams, seed: u64) -> Result<(PolarPullback, GroundTruth)> {
    params.validate()?;
    let n_alines = params.alines_per_frame;
    let n_samples = params.samples_per_aline;
    let n_frames = params.n_frames;

    let mut grng = stream_rng(seed, STREAM_GLOBAL);

    // Shadow band: fixed width, slow sinusoidal drift of the start A-line.
    let gw_start0 = grng.gen_range(0..n_alines);
    let shadow_band: Vec<(usize, usize)> = (0..n_frames)
        .map(|f| {
            let drift = (2.0 * (f as f64 * 0.15).sin()).round() as isize;
            let start = (gw_start0 as isize + drift).rem_euclid(n_alines as isize) as usize;
            (start, params.guidewire_width_alines)
        })
        .collect();

    // Lumen radius: smooth in θ and across frames.
    let theta_phase = grng.gen_range(0.0..std::f64::consts::TAU);
    let lumen_radius: Vec<Vec<u32>> = (0..n_frames)
        .map(|f| {
            let frame_term =
                params.lumen_radius_frame_amp_px * (f as f64 * std::f64::consts::TAU / 24.0).sin();
            (0..n_alines)
                .map(|a| {
                    let theta = a as f64 * std::f64::consts::TAU / n_alines as f64;
                    let r = params.lumen_radius_mean_px
                        + frame_term
                        + params.lumen_radius_theta_amp_px * (theta + theta_phase).sin();
                    r.round().max(4.0) as u32
                })
                .collect()
        })
        .collect();

    let vessels = place_vessels(params, &shadow_band, &mut grng)?;
    let confounders_plan = place_confounders(params, &shadow_band, &vessels, &mut grng);

    // Render frames in parallel from per-frame derived streams.
    let rendered: Vec<(PolarFrame, FrameMask, Vec<ConfounderBlob>)> = (0..n_frames)
        .into_par_iter()
        .map(|f| {
            render_frame(
                params,
                seed,
                f,
                &lumen_radius[f],
                shadow_band[f],
                &vessels,
                &confounders_plan,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut frames = Vec::with_capacity(n_frames);
    let mut masks = Vec::with_capacity(n_frames);
    let mut confounders = Vec::new();
    for (frame, mask, blobs) in rendered {
        frames.push(frame);
        masks.push(mask);
        confounders.extend(blobs);
    }

    let vessel_tracks = vessels
        .iter()
        .map(|v| {
            v.nodes
                .iter()
                .enumerate()
                .map(|(i, &(ca, cr))| {
                    let frame = v.start_frame + i;
                    TruthNode {
                        frame,
                        center_a: ca,
                        center_r: cr,
                        semi_a: v.semi_a,
                        semi_r: v.semi_r,
                        area_px: ellipse_pixels(n_alines, n_samples, ca, cr, v.semi_a, v.semi_r)
                            .len(),
                    }
                })
                .collect()
        })
        .collect();

    let pullback = PolarPullback::new(params.meta(), frames, format!("phantom-{seed}"))?;
    Ok((
        pullback,
        GroundTruth {
            masks,
            lumen_radius,
            shadow_band,
            vessel_tracks,
            confounders,
        },
    ))
}

/// Circular distance between A-lines.
pub fn circ_dist(a: usize, b: usize, n: usize) -> usize {
    let d = (a as isize - b as isize).rem_euclid(n as isize) as usize;
    d.min(n - d)
}

/// Whether A-line `a` lies in the circular band `[start, start+width)`.
pub fn in_band(a: usize, start: usize, width: usize, n: usize) -> bool {
    (a as isize - start as isize).rem_euclid(n as isize) < width as isize
}

/// Rasterizes an ellipse in (a, r), θ circular: pixel centers with
/// ((Δa)/sa)² + ((Δr)/sr)² <= 1.
pub fn ellipse_pixels(
    n_alines: usize,
    n_samples: usize,
    ca: f64,
    cr: f64,
    sa: f64,
    sr: f64,
) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let a_lo = (ca - sa).floor() as isize;
    let a_hi = (ca + sa).ceil() as isize;
    let r_lo = (cr - sr).floor().max(0.0) as usize;
    let r_hi = ((cr + sr).ceil() as usize).min(n_samples - 1);
    for ai in a_lo..=a_hi {
        let a = ai.rem_euclid(n_alines as isize) as usize;
        // Signed circular offset of this A-line from the center.
        let mut da = a as f64 - ca;
        let half = n_alines as f64 / 2.0;
        if da > half {
            da -= n_alines as f64;
        } else if da < -half {
            da += n_alines as f64;
        }
        for r in r_lo..=r_hi {
            let dr = r as f64 - cr;
            if (da / sa).powi(2) + (dr / sr).powi(2) <= 1.0 {
                out.push((a as u32, r as u32));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn place_vessels(
    params: &PhantomParams,
    shadow_band: &[(usize, usize)],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<VesselPlan>> {
    let n_alines = params.alines_per_frame;
    let (r_lo, r_hi) = params.vessel_center_radial_range();
    let (s_lo, s_hi) = params.vessel_radius_px;
    let mut plans: Vec<VesselPlan> = Vec::new();

    let d_theta = std::f64::consts::TAU / n_alines as f64;

    for vi in 0..params.vessel_count {
        let extra_max = (params.n_frames - params.vessel_min_frames).min(6);
        let span = params.vessel_min_frames + rng.gen_range(0..=extra_max);
        let start_frame = rng.gen_range(0..=(params.n_frames - span));
        let semi_r = rng.gen_range(s_lo..=s_hi);
        let semi_px_theta = rng.gen_range(s_lo..=s_hi);
        let cr0 = rng.gen_range(r_lo..=r_hi);

        // θ extent and drift are physical (pixels of arc at the vessel
        // radius), converted to A-lines for this frame geometry. The lower
        // clamp keeps cross-sections at least a few A-lines wide so coarse
        // angular sampling cannot reduce them to slivers that the Gaussian
        // pre-smoothing would erase.
        let arc_px_per_aline = cr0 * d_theta;
        let semi_a = (semi_px_theta / arc_px_per_aline).clamp(3.0, n_alines as f64 / 8.0);
        // Total θ wander over the track, capped at 5 A-lines.
        let wander = (6.0 / arc_px_per_aline).clamp(0.8, 5.0);
        let margin_alines = (semi_a + wander).ceil() as usize + 1;

        // θ placement: keep clear of the shadow band (any frame's position)
        // and of other vessels. Enumerate the feasible A-lines and draw one.
        let feasible: Vec<usize> = (0..n_alines)
            .filter(|&ca0| {
                for &(gs, gw) in shadow_band {
                    let band_center = (gs + gw / 2) % n_alines;
                    if circ_dist(ca0, band_center, n_alines) < gw / 2 + margin_alines + 1 {
                        return false;
                    }
                }
                for p in &plans {
                    let other_a = p.nodes[0].0.round() as usize % n_alines;
                    if circ_dist(ca0, other_a, n_alines) < margin_alines + p.margin_alines + 1 {
                        return false;
                    }
                }
                true
            })
            .collect();
        if feasible.is_empty() {
            return Err(Error::Params(format!(
                "could not place vessel {vi}: θ too crowded \
                 (vessel_count, shadow width, and frame size conflict)"
            )));
        }
        let ca0 = feasible[rng.gen_range(0..feasible.len())];

        // Per-frame drift: ≤ 3 px radially; θ drift bounded by the wander cap.
        let mut nodes = Vec::with_capacity(span);
        let mut ca = ca0 as f64;
        let mut cr = cr0;
        let step_a = (wander / 2.0).min(2.0);
        for _ in 0..span {
            nodes.push((ca.rem_euclid(n_alines as f64), cr));
            ca += rng.gen_range(-step_a..=step_a);
            cr = (cr + rng.gen_range(-3.0..=3.0)).clamp(r_lo, r_hi);
            let drift = ca - ca0 as f64;
            ca = ca0 as f64 + drift.clamp(-wander, wander);
        }
        plans.push(VesselPlan {
            start_frame,
            nodes,
            semi_a,
            semi_r,
            margin_alines,
        });
    }
    Ok(plans)
}

fn place_confounders(
    params: &PhantomParams,
    shadow_band: &[(usize, usize)],
    vessels: &[VesselPlan],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<ConfounderPlan> {
    let n_alines = params.alines_per_frame;
    let mut out: Vec<ConfounderPlan> = Vec::new();
    for ci in 0..params.confounder_count {
        let kind = if ci % 2 == 0 {
            ConfounderKind::Notch
        } else {
            ConfounderKind::Calcification
        };
        // Confounders persist a few frames so the segmenter sees them often.
        let span = 3.min(params.n_frames);
        let start_frame = rng.gen_range(0..=(params.n_frames - span));
        let width = rng.gen_range(4..=7);
        let depth = rng.gen_range(14..=24);
        let mut center_a = rng.gen_range(0..n_alines);
        let mut placed = false;
        for _ in 0..2000 {
            let mut ok = true;
            for &(gs, gw) in shadow_band {
                let band_center = (gs + gw / 2) % n_alines;
                if circ_dist(center_a, band_center, n_alines) < gw / 2 + width / 2 + 4 {
                    ok = false;
                    break;
                }
            }
            if ok {
                for v in vessels {
                    let va = v.nodes[0].0.round() as usize % n_alines;
                    if circ_dist(center_a, va, n_alines) < v.margin_alines + width / 2 + 3 {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                for c in &out {
                    if circ_dist(center_a, c.center_a, n_alines) < (c.width_alines + width) / 2 + 4
                    {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                placed = true;
                break;
            }
            center_a = rng.gen_range(0..n_alines);
        }
        if !placed {
            // Confounders are texture; an overcrowded frame just gets fewer.
            continue;
        }
        let (r_lo, r_hi) = params.vessel_center_radial_range();
        let center_r = if r_lo <= r_hi {
            rng.gen_range(r_lo..=r_hi)
        } else {
            r_lo
        };
        for f in start_frame..start_frame + span {
            out.push(ConfounderPlan {
                frame: f,
                kind,
                center_a,
                width_alines: width,
                depth_px: depth,
                center_r,
            });
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn render_frame(
    params: &PhantomParams,
    seed: u64,
    f: usize,
    lumen: &[u32],
    shadow: (usize, usize),
    vessels: &[VesselPlan],
    confounders: &[ConfounderPlan],
) -> Result<(PolarFrame, FrameMask, Vec<ConfounderBlob>)> {
    let n_alines = params.alines_per_frame;
    let n_samples = params.samples_per_aline;
    let mut rng = stream_rng(seed, STREAM_FRAME_BASE + f as u64);

    // Tissue speckle: μ_t · s with s = (1-c) + c·Exp(1), clipped, 3x3 mean blur.
    let mut tissue = vec![0.0f64; n_alines * n_samples];
    for v in tissue.iter_mut() {
        let e = -(1.0 - rng.gen::<f64>()).ln(); // Exp(1)
        let s = (1.0 - params.speckle_contrast) + params.speckle_contrast * e;
        *v = (params.tissue_intensity * s).clamp(0.0, 1.0);
    }
    let tissue = mean_blur3(&tissue, n_alines, n_samples);

    let mut px = vec![0.0f64; n_alines * n_samples];
    for a in 0..n_alines {
        let lr = lumen[a] as usize;
        for r in 0..n_samples {
            let v = if r < lr {
                0.01 + 0.02 * rng.gen::<f64>()
            } else if r < (lr + RIDGE_W).min(n_samples) {
                0.78 + 0.18 * rng.gen::<f64>()
            } else {
                tissue[a * n_samples + r]
            };
            px[a * n_samples + r] = v;
        }
    }

    // Confounders.
    let mut blobs = Vec::new();
    for c in confounders.iter().filter(|c| c.frame == f) {
        let mut pixels = Vec::new();
        match c.kind {
            ConfounderKind::Notch => {
                // Dark pocket connected to the lumen: the boundary opens and
                // the ridge moves outward across the notch width.
                let half = c.width_alines / 2;
                for off in 0..c.width_alines {
                    let a = (c.center_a + n_alines + off - half) % n_alines;
                    let lr = lumen[a] as usize;
                    // Taper: deepest at the notch center.
                    let t = 1.0 - ((off as f64 - half as f64) / (half.max(1) as f64)).powi(2);
                    let depth = ((c.depth_px as f64) * t).round() as usize;
                    if depth == 0 {
                        continue;
                    }
                    let outer = (lr + depth).min(n_samples - RIDGE_W - 1);
                    for r in lr..outer {
                        px[a * n_samples + r] = 0.01 + 0.02 * rng.gen::<f64>();
                        pixels.push((a as u32, r as u32));
                    }
                    for r in outer..(outer + RIDGE_W).min(n_samples) {
                        px[a * n_samples + r] = 0.78 + 0.18 * rng.gen::<f64>();
                    }
                }
            }
            ConfounderKind::Calcification => {
                let sa = c.width_alines as f64 / 2.0;
                let sr = c.depth_px as f64 / 3.0;
                for (a, r) in
                    ellipse_pixels(n_alines, n_samples, c.center_a as f64, c.center_r, sa, sr)
                {
                    px[a as usize * n_samples + r as usize] = 0.85 + 0.12 * rng.gen::<f64>();
                    pixels.push((a, r));
                }
            }
        }
        if !pixels.is_empty() {
            blobs.push(ConfounderBlob {
                frame: f,
                kind: c.kind,
                pixels,
            });
        }
    }

    // Vessels: stamped last so their interior attenuation is exact.
    let mut mask = FrameMask::zeros(n_alines, n_samples);
    for v in vessels {
        if f < v.start_frame || f >= v.start_frame + v.nodes.len() {
            continue;
        }
        let (ca, cr) = v.nodes[f - v.start_frame];
        for (a, r) in ellipse_pixels(n_alines, n_samples, ca, cr, v.semi_a, v.semi_r) {
            let idx = a as usize * n_samples + r as usize;
            px[idx] *= VESSEL_ATT;
            mask.set(a as usize, r as usize, 1);
        }
    }

    // Guidewire shadow: attenuate everything beyond a point just inside the
    // lumen boundary (the wire sits in the lumen and blocks the ridge too).
    let (gs, gw) = shadow;
    for off in 0..gw {
        let a = (gs + off) % n_alines;
        let from = (lumen[a] as usize).saturating_sub(4);
        for r in from..n_samples {
            px[a * n_samples + r] *= SHADOW_ATT;
        }
    }

    let frame = PolarFrame::new(n_alines, n_samples, px)?;
    Ok((frame, mask, blobs))
}

/// 3x3 mean filter: circular over rows (θ), replicated at column (r) borders.
fn mean_blur3(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for a in 0..rows {
        let am = (a + rows - 1) % rows;
        let ap = (a + 1) % rows;
        for r in 0..cols {
            let rm = r.saturating_sub(1);
            let rp = (r + 1).min(cols - 1);
            let mut s = 0.0;
            for &ai in &[am, a, ap] {
                s += src[ai * cols + rm] + src[ai * cols + r] + src[ai * cols + rp];
            }
            out[a * cols + r] = s / 9.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_params() -> PhantomParams {
        PhantomParams {
            n_frames: 12,
            alines_per_frame: 64,
            samples_per_aline: 320,
            lumen_radius_mean_px: 70.0,
            lumen_radius_theta_amp_px: 5.0,
            lumen_radius_frame_amp_px: 3.0,
            vessel_count: 2,
            vessel_min_frames: 4,
            guidewire_width_alines: 8,
            confounder_count: 2,
            ..PhantomParams::default()
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = small_params();
        let (pb1, gt1) = generate_phantom(&p, 77).unwrap();
        let (pb2, gt2) = generate_phantom(&p, 77).unwrap();
        assert_eq!(pb1.frames, pb2.frames);
        assert_eq!(gt1.masks, gt2.masks);
        assert_eq!(gt1.shadow_band, gt2.shadow_band);
        let (pb3, _) = generate_phantom(&p, 78).unwrap();
        assert_ne!(pb1.frames, pb3.frames);
    }

    #[test]
    fn frame_and_mask_counts_match_params() {
        let mut p = small_params();
        p.n_frames = 50;
        let (pb, gt) = generate_phantom(&p, 3).unwrap();
        assert_eq!(pb.n_frames(), 50);
        assert_eq!(gt.masks.len(), 50);
    }

    #[test]
    fn tracks_span_at_least_min_frames_verified_from_masks() {
        let mut p = small_params();
        p.vessel_count = 3;
        p.vessel_min_frames = 4;
        p.n_frames = 16;
        let (_, gt) = generate_phantom(&p, 5).unwrap();
        assert_eq!(gt.vessel_tracks.len(), 3);
        for track in &gt.vessel_tracks {
            assert!(track.len() >= 4, "track has {} frames", track.len());
            for w in track.windows(2) {
                assert_eq!(w[1].frame, w[0].frame + 1);
            }
            // The emitted masks actually contain the cross-sections.
            for node in track {
                let mask = &gt.masks[node.frame];
                let a = node.center_a.round() as usize % p.alines_per_frame;
                let r = node.center_r.round() as usize;
                assert_eq!(mask.get(a, r), 1, "center pixel not in mask");
            }
        }
    }

    #[test]
    fn mask_area_equals_rasterized_ellipse_exactly() {
        let p = small_params();
        let (_, gt) = generate_phantom(&p, 9).unwrap();
        for (f, mask) in gt.masks.iter().enumerate() {
            let mut expected = 0usize;
            for track in &gt.vessel_tracks {
                for node in track.iter().filter(|n| n.frame == f) {
                    expected += node.area_px;
                }
            }
            assert_eq!(mask.count_positive(), expected, "frame {f}");
        }
    }

    #[test]
    fn vessel_pixels_never_touch_lumen_interior() {
        let p = small_params();
        let (_, gt) = generate_phantom(&p, 13).unwrap();
        let n = p.alines_per_frame;
        for (f, mask) in gt.masks.iter().enumerate() {
            for a in 0..n {
                for r in 0..p.samples_per_aline {
                    if mask.get(a, r) == 0 {
                        continue;
                    }
                    let neighbors = [
                        ((a + 1) % n, r),
                        ((a + n - 1) % n, r),
                        (a, r + 1),
                        (a, r.saturating_sub(1)),
                    ];
                    for (na, nr) in neighbors {
                        assert!(
                            nr as u32 >= gt.lumen_radius[f][na],
                            "vessel pixel ({a},{r}) adjacent to lumen interior at frame {f}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn vessel_interior_much_darker_than_tissue() {
        let p = small_params();
        let (pb, gt) = generate_phantom(&p, 21).unwrap();
        let mut vessel_sum = 0.0;
        let mut vessel_n = 0usize;
        let mut tissue_sum = 0.0;
        let mut tissue_n = 0usize;
        for (f, frame) in pb.frames.iter().enumerate() {
            let mask = &gt.masks[f];
            let (gs, gw) = gt.shadow_band[f];
            for a in 0..p.alines_per_frame {
                if in_band(a, gs, gw, p.alines_per_frame) {
                    continue;
                }
                let lr = gt.lumen_radius[f][a] as usize;
                for r in (lr + RIDGE_W + 2)..p.samples_per_aline {
                    if mask.get(a, r) == 1 {
                        vessel_sum += frame.get(a, r);
                        vessel_n += 1;
                    } else {
                        tissue_sum += frame.get(a, r);
                        tissue_n += 1;
                    }
                }
            }
        }
        let vessel_mean = vessel_sum / vessel_n as f64;
        let tissue_mean = tissue_sum / tissue_n as f64;
        assert!(
            vessel_mean < 0.2 * tissue_mean,
            "vessel {vessel_mean} vs tissue {tissue_mean}"
        );
    }

    #[test]
    fn infeasible_geometry_is_parameter_error() {
        let mut p = small_params();
        // ROI so shallow that no vessel fits between lumen and crop depth.
        p.roi_depth_px = 20;
        assert!(matches!(generate_phantom(&p, 1), Err(Error::Params(_))));
    }

    #[test]
    fn shadow_attenuates_beyond_guidewire() {
        let p = small_params();
        let (pb, gt) = generate_phantom(&p, 31).unwrap();
        for (f, frame) in pb.frames.iter().enumerate() {
            let (gs, gw) = gt.shadow_band[f];
            let a = (gs + gw / 2) % p.alines_per_frame;
            let lr = gt.lumen_radius[f][a] as usize;
            let mean_shadow: f64 = (lr..p.samples_per_aline)
                .map(|r| frame.get(a, r))
                .sum::<f64>()
                / (p.samples_per_aline - lr) as f64;
            assert!(
                mean_shadow < 0.1 * p.tissue_intensity,
                "frame {f}: {mean_shadow}"
            );
        }
    }
}
