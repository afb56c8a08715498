//! Candidate extraction from predicted masks, classifier patches, the shallow
//! CNN verdict, and mask refinement.

mod classifier;

pub use classifier::{classifier_probs, ClassifierModel, PATCH_SIDE};

use crate::imaging::{FrameMask, PolarFrame, PullbackMeta};
use crate::nn::layers::resize_bilinear;
use crate::nn::{median_frequency_weights, weighted_softmax_ce, Adam, Tensor4, TrainSchedule};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Pixels dropped as speckle noise below this blob size.
pub const MIN_BLOB_PX: usize = 3;
/// Patch padding around the bounding box, in pixels.
pub const PATCH_PAD: usize = 3;

/// Geometric context of a mask: polar spacing plus the per-A-line pixel shift
/// that maps mask columns back to raw radial indices (absent for raw-space
/// masks).
#[derive(Debug, Clone)]
pub struct FrameGeometry {
    pub r_pixel_mm: f64,
    pub d_theta_rad: f64,
    pub shift_record: Option<Vec<usize>>,
}

impl FrameGeometry {
    pub fn raw(meta: &PullbackMeta) -> Self {
        Self {
            r_pixel_mm: meta.r_pixel_mm(),
            d_theta_rad: meta.d_theta_rad(),
            shift_record: None,
        }
    }

    pub fn shifted(meta: &PullbackMeta, shift_record: Vec<usize>) -> Self {
        Self {
            r_pixel_mm: meta.r_pixel_mm(),
            d_theta_rad: meta.d_theta_rad(),
            shift_record: Some(shift_record),
        }
    }

    #[inline]
    fn raw_r(&self, a: usize, col: usize) -> usize {
        match &self.shift_record {
            Some(rec) => col + rec[a],
            None => col,
        }
    }
}

/// θ-wrap-aware bounding box in unwrapped coordinates: `a_start` may be
/// negative or exceed the frame height (reads wrap), `r_start` may be
/// negative (reads replicate the border).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub a_start: isize,
    pub a_len: usize,
    pub r_start: isize,
    pub r_len: usize,
}

/// A connected blob in a predicted mask.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Blob pixels as (a, col) in the mask's own coordinates.
    pub blob_pixels: Vec<(usize, usize)>,
    /// Tight box expanded symmetrically so the blob centroid sits at the
    /// box center to within one pixel per axis.
    pub bbox: BBox,
    pub area_px: usize,
    /// Jacobian-weighted physical area: Σ (r_raw + ½)·Δr_mm·Δr_mm·Δθ.
    pub area_mm2: f64,
    /// Centroid in mask coordinates; `a` is circular, reduced to [0, rows).
    pub centroid_a: f64,
    pub centroid_col: f64,
    /// Centroid radial position in raw (un-shifted) coordinates.
    pub centroid_r_raw: f64,
}

/// Extracts 8-connected components (θ circular) of at least `min_blob_px`
/// pixels, each with a centered wrap-aware bounding box and physical area.
pub fn extract_candidates(
    mask: &FrameMask,
    geom: &FrameGeometry,
    min_blob_px: usize,
) -> Vec<Candidate> {
    let rows = mask.rows();
    let cols = mask.cols();
    let mut visited = vec![false; rows * cols];
    let mut out = Vec::new();

    for a0 in 0..rows {
        for r0 in 0..cols {
            if mask.get(a0, r0) == 0 || visited[a0 * cols + r0] {
                continue;
            }
            // Flood fill tracking unwrapped A-line coordinates so seam
            // blobs stay contiguous.
            let mut stack: Vec<(isize, usize)> = vec![(a0 as isize, r0)];
            visited[a0 * cols + r0] = true;
            let mut pixels_unwrapped: Vec<(isize, usize)> = Vec::new();
            while let Some((ua, r)) = stack.pop() {
                pixels_unwrapped.push((ua, r));
                for da in -1isize..=1 {
                    for dr in -1isize..=1 {
                        if da == 0 && dr == 0 {
                            continue;
                        }
                        let nua = ua + da;
                        let nr = r as isize + dr;
                        if nr < 0 || nr >= cols as isize {
                            continue;
                        }
                        let na = nua.rem_euclid(rows as isize) as usize;
                        let nr = nr as usize;
                        if mask.get(na, nr) == 1 && !visited[na * cols + nr] {
                            visited[na * cols + nr] = true;
                            stack.push((nua, nr));
                        }
                    }
                }
            }
            if pixels_unwrapped.len() < min_blob_px {
                continue;
            }
            out.push(build_candidate(&pixels_unwrapped, rows, geom));
        }
    }
    out
}

/// Builds a candidate directly from a known pixel set (e.g. a ground-truth
/// blob), unwrapping θ about the first pixel. Returns `None` for sets smaller
/// than `min_blob_px`.
pub fn candidate_from_pixels(
    pixels: &[(usize, usize)],
    rows: usize,
    geom: &FrameGeometry,
    min_blob_px: usize,
) -> Option<Candidate> {
    if pixels.len() < min_blob_px {
        return None;
    }
    let a0 = pixels[0].0 as isize;
    let half = rows as isize / 2;
    let unwrapped: Vec<(isize, usize)> = pixels
        .iter()
        .map(|&(a, r)| {
            let mut d = a as isize - a0;
            if d > half {
                d -= rows as isize;
            } else if d < -half {
                d += rows as isize;
            }
            (a0 + d, r)
        })
        .collect();
    Some(build_candidate(&unwrapped, rows, geom))
}

fn build_candidate(
    pixels_unwrapped: &[(isize, usize)],
    rows: usize,
    geom: &FrameGeometry,
) -> Candidate {
    let n = pixels_unwrapped.len() as f64;
    let sum_a: f64 = pixels_unwrapped.iter().map(|&(a, _)| a as f64).sum();
    let sum_r: f64 = pixels_unwrapped.iter().map(|&(_, r)| r as f64).sum();
    let centroid_ua = sum_a / n;
    let centroid_col = sum_r / n;

    let a_min = pixels_unwrapped.iter().map(|&(a, _)| a).min().unwrap();
    let a_max = pixels_unwrapped.iter().map(|&(a, _)| a).max().unwrap();
    let r_min = pixels_unwrapped.iter().map(|&(_, r)| r).min().unwrap() as isize;
    let r_max = pixels_unwrapped.iter().map(|&(_, r)| r).max().unwrap() as isize;

    // Symmetric expansion of the tight box about the rounded centroid.
    let ca = centroid_ua.round() as isize;
    let cr = centroid_col.round() as isize;
    let half_a = (ca - a_min).max(a_max - ca).max(0);
    let half_r = (cr - r_min).max(r_max - cr).max(0);
    let bbox = BBox {
        a_start: ca - half_a,
        a_len: (2 * half_a + 1) as usize,
        r_start: cr - half_r,
        r_len: (2 * half_r + 1) as usize,
    };

    let mut blob_pixels: Vec<(usize, usize)> = pixels_unwrapped
        .iter()
        .map(|&(ua, r)| (ua.rem_euclid(rows as isize) as usize, r))
        .collect();
    blob_pixels.sort_unstable();

    let mut area_mm2 = 0.0;
    let mut sum_r_raw = 0.0;
    for &(a, col) in &blob_pixels {
        let r_raw = geom.raw_r(a, col);
        sum_r_raw += r_raw as f64;
        let r_mm = (r_raw as f64 + 0.5) * geom.r_pixel_mm;
        area_mm2 += r_mm * geom.r_pixel_mm * geom.d_theta_rad;
    }

    Candidate {
        area_px: blob_pixels.len(),
        area_mm2,
        centroid_a: centroid_ua.rem_euclid(rows as f64),
        centroid_col,
        centroid_r_raw: sum_r_raw / n,
        blob_pixels,
        bbox,
    }
}

/// A square grayscale patch in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub pixels: Vec<f64>,
}

impl Patch {
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec(1, 1, self.side, self.side, self.pixels.clone())
    }
}

/// Crops the candidate's bounding box from the pre-processed image, pads
/// every edge by `PATCH_PAD` pixels with values read from the image (θ wraps,
/// r replicates the border), and bilinearly resizes to `PATCH_SIDE`².
pub fn make_patch(img: &PolarFrame, c: &Candidate) -> Result<Patch> {
    if c.bbox.a_len == 0 || c.bbox.r_len == 0 {
        return Err(Error::Contract("degenerate bounding box".into()));
    }
    let rows = img.rows() as isize;
    let cols = img.cols() as isize;
    let pad = PATCH_PAD as isize;
    let h = c.bbox.a_len + 2 * PATCH_PAD;
    let w = c.bbox.r_len + 2 * PATCH_PAD;
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        let a = (c.bbox.a_start - pad + i).rem_euclid(rows) as usize;
        for j in 0..w as isize {
            let r = (c.bbox.r_start - pad + j).clamp(0, cols - 1) as usize;
            data.push(img.get(a, r));
        }
    }
    let t = Tensor4::from_vec(1, 1, h, w, data);
    let resized = resize_bilinear(&t, PATCH_SIDE, PATCH_SIDE);
    Ok(Patch {
        side: PATCH_SIDE,
        pixels: resized.as_slice().to_vec(),
    })
}

/// Rotates a square patch about its center. Multiples of 90° are exact grid
/// permutations; other angles use bilinear resampling with replicated
/// out-of-support reads.
pub fn rotate_patch(patch: &Patch, angle_deg: f64) -> Result<Patch> {
    let s = patch.side;
    if patch.pixels.len() != s * s {
        return Err(Error::Contract("patch is not square".into()));
    }
    let quarter = (angle_deg / 90.0).round();
    if (angle_deg - quarter * 90.0).abs() < 1e-12 {
        let q = (quarter.rem_euclid(4.0)) as usize;
        let mut out = vec![0.0; s * s];
        for i in 0..s {
            for j in 0..s {
                // Source index that lands on (i, j) after rotating by q
                // quarter turns (counterclockwise in (row, col)).
                let (si, sj) = match q {
                    0 => (i, j),
                    1 => (j, s - 1 - i),
                    2 => (s - 1 - i, s - 1 - j),
                    _ => (s - 1 - j, i),
                };
                out[i * s + j] = patch.pixels[si * s + sj];
            }
        }
        return Ok(Patch {
            side: s,
            pixels: out,
        });
    }

    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cx = (s as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            let dy = i as f64 - cx;
            let dx = j as f64 - cx;
            // Inverse rotation to find the source position.
            let sy = cx + cos * dy + sin * dx;
            let sx = cx - sin * dy + cos * dx;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let fy = sy - y0;
            let fx = sx - x0;
            let clamp = |v: f64| (v.max(0.0) as usize).min(s - 1);
            let (y0c, y1c) = (clamp(y0), clamp(y0 + 1.0));
            let (x0c, x1c) = (clamp(x0), clamp(x0 + 1.0));
            out[i * s + j] = (1.0 - fy)
                * ((1.0 - fx) * patch.pixels[y0c * s + x0c] + fx * patch.pixels[y0c * s + x1c])
                + fy * ((1.0 - fx) * patch.pixels[y1c * s + x0c]
                    + fx * patch.pixels[y1c * s + x1c]);
        }
    }
    Ok(Patch {
        side: s,
        pixels: out,
    })
}

/// The training-time augmentation set for a positive patch: rotations by
/// 30° steps from 30° through 180°, exactly six patches.
pub fn rotate_patch_set(patch: &Patch) -> Result<Vec<Patch>> {
    (1..=6)
        .map(|k| rotate_patch(patch, 30.0 * k as f64))
        .collect()
}

/// Builds the training multiset: every positive contributes itself plus its
/// six rotations (7× positives); negatives are never rotated.
pub fn augment_training_patches(patches: &[(Patch, bool)]) -> Result<Vec<(Patch, bool)>> {
    let mut out = Vec::new();
    for (p, label) in patches {
        out.push((p.clone(), *label));
        if *label {
            for r in rotate_patch_set(p)? {
                out.push((r, true));
            }
        }
    }
    Ok(out)
}

/// Epoch log for classifier training.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ClfEpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trains the shallow CNN on labeled patches. Positive-class rotation
/// augmentation is applied to the training split only. Requires both classes.
pub fn train_classifier(
    train: &[(Patch, bool)],
    val: Option<&[(Patch, bool)]>,
    sched: &TrainSchedule,
    seed: u64,
) -> Result<(ClassifierModel, Vec<ClfEpochStats>)> {
    sched.validate()?;
    let n_pos = train.iter().filter(|(_, l)| *l).count();
    if n_pos == 0 || n_pos == train.len() {
        return Err(Error::Config(format!(
            "classifier training needs both classes ({} positives of {})",
            n_pos,
            train.len()
        )));
    }
    let augmented = augment_training_patches(train)?;
    let counts = [
        augmented.iter().filter(|(_, l)| !*l).count() as u64,
        augmented.iter().filter(|(_, l)| *l).count() as u64,
    ];
    let weights = median_frequency_weights(&counts)?;

    let mut model = ClassifierModel::build(seed);
    let mut adam = Adam::new();
    let mut history = Vec::new();
    let mut stop_losses: Vec<f64> = Vec::new();

    for epoch in 0..sched.max_epochs {
        let lr = crate::nn::lr_piecewise(epoch, sched);
        let mut order: Vec<usize> = (0..augmented.len()).collect();
        let mut rng = stream_rng(seed, 0xC7F0000 + epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        // The deepest batchnorm sees a 1x1 feature map, so training batches
        // must hold at least 2 patches; a trailing singleton joins the
        // previous batch.
        let mut batches: Vec<Vec<usize>> = order
            .chunks(sched.batch_size.max(2))
            .map(|c| c.to_vec())
            .collect();
        if batches.len() >= 2 && batches.last().map_or(false, |b| b.len() == 1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }

        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in &batches {
            let xs: Vec<Tensor4> = chunk.iter().map(|&i| augmented[i].0.to_tensor()).collect();
            let x = Tensor4::stack(&xs);
            let labels: Vec<u8> = chunk.iter().map(|&i| u8::from(augmented[i].1)).collect();
            let excluded = vec![false; labels.len()];
            model.zero_grad();
            let logits = model.forward(&x, true)?;
            let (loss, grad) = weighted_softmax_ce(&logits, &labels, &excluded, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite classifier loss at epoch {epoch}, step {n_batches}"
                )));
            }
            model.backward(&grad);
            let mut params = model.params_mut();
            adam.step(&mut params, lr, sched.l2_lambda)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;

        // Early stopping on the validation split if given, else on train loss.
        let val_loss = match val {
            Some(vs) if !vs.is_empty() => {
                let mut loss = 0.0;
                for (p, l) in vs {
                    let logits = model.forward(&p.to_tensor(), false)?;
                    let (lv, _) =
                        weighted_softmax_ce(&logits, &[u8::from(*l)], &[false], &weights)?;
                    loss += lv;
                }
                loss / vs.len() as f64
            }
            _ => train_loss,
        };
        history.push(ClfEpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        stop_losses.push(val_loss);
        if crate::nn::early_stop(&stop_losses, sched) {
            break;
        }
    }
    Ok((model, history))
}

/// Argmax labels and microvessel probabilities for a batch of patches.
pub fn classify_candidates(
    model: &mut ClassifierModel,
    patches: &[Patch],
) -> Result<Vec<(bool, f64)>> {
    let mut out = Vec::with_capacity(patches.len());
    for p in patches {
        let probs = classifier_probs(model, &p.to_tensor())?;
        let p_vessel = probs.at(0, 1, 0, 0);
        out.push((p_vessel > probs.at(0, 0, 0, 0), p_vessel));
    }
    Ok(out)
}

/// Clears the pixels of candidates labeled non-microvessel; everything else
/// is untouched. Never adds pixels.
pub fn refine_mask(mask: &FrameMask, candidates: &[Candidate], labels: &[bool]) -> FrameMask {
    assert_eq!(candidates.len(), labels.len());
    let mut out = mask.clone();
    for (c, &keep) in candidates.iter().zip(labels) {
        if keep {
            continue;
        }
        for &(a, r) in &c.blob_pixels {
            out.set(a, r, 0);
        }
    }
    out
}

/// One row of the candidate dump (CSV interface).
#[derive(Debug, Clone, serde::Serialize)]
pub struct CandidateRecord {
    pub frame: usize,
    pub centroid_a: f64,
    pub centroid_r: f64,
    pub area_px: usize,
    pub area_mm2: f64,
    pub prob_vessel: f64,
    pub label: u8,
}

pub fn write_candidates_csv(path: &std::path::Path, rows: &[CandidateRecord]) -> Result<()> {
    let mut s = String::from("frame,centroid_a,centroid_r,area_px,area_mm2,prob_vessel,label\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.4},{:.4},{},{:.8},{:.6},{}\n",
            r.frame, r.centroid_a, r.centroid_r, r.area_px, r.area_mm2, r.prob_vessel, r.label
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> FrameGeometry {
        FrameGeometry {
            r_pixel_mm: 0.005,
            d_theta_rad: std::f64::consts::TAU / 64.0,
            shift_record: None,
        }
    }

    fn mask_of(rows: usize, cols: usize, px: &[(usize, usize)]) -> FrameMask {
        let mut m = FrameMask::zeros(rows, cols);
        for &(a, r) in px {
            m.set(a, r, 1);
        }
        m
    }

    #[test]
    fn empty_mask_gives_no_candidates() {
        let m = FrameMask::zeros(16, 16);
        assert!(extract_candidates(&m, &geom(), MIN_BLOB_PX).is_empty());
    }

    #[test]
    fn plus_shaped_blob_has_tight_3x3_box_and_central_centroid() {
        let m = mask_of(16, 16, &[(8, 8), (7, 8), (9, 8), (8, 7), (8, 9)]);
        let cands = extract_candidates(&m, &geom(), MIN_BLOB_PX);
        assert_eq!(cands.len(), 1);
        let c = &cands[0];
        assert_eq!(c.area_px, 5);
        assert!((c.centroid_a - 8.0).abs() < 1e-12);
        assert!((c.centroid_col - 8.0).abs() < 1e-12);
        assert_eq!(
            c.bbox,
            BBox {
                a_start: 7,
                a_len: 3,
                r_start: 7,
                r_len: 3
            }
        );
    }

    #[test]
    fn seam_straddling_blob_is_one_candidate() {
        let rows = 496;
        let m = mask_of(rows, 16, &[(494, 5), (495, 5), (0, 5), (1, 5)]);
        let cands = extract_candidates(&m, &geom(), MIN_BLOB_PX);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].area_px, 4);
        // Circular centroid sits on the seam, not at the arithmetic mean.
        let ca = cands[0].centroid_a;
        assert!(
            ca > 495.0 || ca < 1.0,
            "centroid {ca} should be near the seam"
        );
    }

    #[test]
    fn min_blob_filter_drops_specks() {
        let m = mask_of(16, 16, &[(2, 2), (10, 10), (10, 11), (10, 12)]);
        let cands = extract_candidates(&m, &geom(), 3);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].area_px, 3);
    }

    /// Physical-disk area via the polar Jacobian stays within 5% of πR² for
    /// disks at generic (off-lattice) placements; exact lattice alignments
    /// can push pixel-center rasterization noise past that at the smallest
    /// radii, so centers here carry fractional offsets.
    #[test]
    fn jacobian_area_matches_analytic_disk() {
        let g = FrameGeometry {
            r_pixel_mm: 0.005,
            d_theta_rad: std::f64::consts::TAU / 496.0,
            shift_record: None,
        };
        for &(r0_px, radius_px) in &[
            (100.3f64, 4.0f64),
            (110.37, 5.0),
            (120.21, 6.0),
            (250.11, 10.0),
        ] {
            // Rasterize the set of pixels whose centers lie inside a physical
            // disk of radius R centered at (r = r0, θ = 0.31 Δθ).
            let rows = 496;
            let cols = 320;
            let radius_mm = radius_px * g.r_pixel_mm;
            let phi = 0.31 * g.d_theta_rad;
            let c0 = (r0_px + 0.5) * g.r_pixel_mm;
            let (cx, cy) = (c0 * phi.cos(), c0 * phi.sin());
            let mut mask = FrameMask::zeros(rows, cols);
            for a in 0..rows {
                let theta = a as f64 * g.d_theta_rad;
                let theta = if theta > std::f64::consts::PI {
                    theta - std::f64::consts::TAU
                } else {
                    theta
                };
                for r in 0..cols {
                    let rm = (r as f64 + 0.5) * g.r_pixel_mm;
                    let x = rm * theta.cos();
                    let y = rm * theta.sin();
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy)).sqrt() <= radius_mm {
                        mask.set(a, r, 1);
                    }
                }
            }
            let cands = extract_candidates(&mask, &g, 1);
            assert_eq!(cands.len(), 1, "R={radius_px}");
            let analytic = std::f64::consts::PI * radius_mm * radius_mm;
            let got = cands[0].area_mm2;
            let rel = (got - analytic).abs() / analytic;
            assert!(rel <= 0.05, "R={radius_px}: {got} vs {analytic} ({rel})");
        }
    }

    #[test]
    fn patch_of_24px_box_is_identity_crop() {
        // A 24×24 bounding box pads to exactly 30×30, so the resize is the
        // identity and the patch equals the padded crop.
        let mut img = PolarFrame::zeros(64, 64);
        for a in 0..64 {
            for r in 0..64 {
                img.set(a, r, ((a * 31 + r * 7) % 100) as f64 / 100.0);
            }
        }
        let c = Candidate {
            blob_pixels: vec![(20, 20)],
            bbox: BBox {
                a_start: 10,
                a_len: 24,
                r_start: 12,
                r_len: 24,
            },
            area_px: 1,
            area_mm2: 0.0,
            centroid_a: 21.5,
            centroid_col: 23.5,
            centroid_r_raw: 23.5,
        };
        let p = make_patch(&img, &c).unwrap();
        assert_eq!(p.side, 30);
        for i in 0..30 {
            for j in 0..30 {
                let a = (10 - 3 + i as isize).rem_euclid(64) as usize;
                let r = (12 - 3 + j as isize).clamp(0, 63) as usize;
                assert_eq!(p.pixels[i * 30 + j], img.get(a, r));
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let img = PolarFrame::new(32, 32, vec![0.37; 32 * 32]).unwrap();
        let c = Candidate {
            blob_pixels: vec![(5, 5)],
            bbox: BBox {
                a_start: 3,
                a_len: 5,
                r_start: 3,
                r_len: 7,
            },
            area_px: 1,
            area_mm2: 0.0,
            centroid_a: 5.0,
            centroid_col: 6.0,
            centroid_r_raw: 6.0,
        };
        let p = make_patch(&img, &c).unwrap();
        assert!(p.pixels.iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn resize_matches_bruteforce_bilinear() {
        // A 60×60 padded box downsampled to 30×30 equals direct bilinear
        // resampling (align-corners) computed from scratch.
        let mut img = PolarFrame::zeros(128, 128);
        for a in 0..128 {
            for r in 0..128 {
                img.set(a, r, ((a * 13 + r * 29) % 111) as f64 / 111.0);
            }
        }
        let c = Candidate {
            blob_pixels: vec![(60, 60)],
            bbox: BBox {
                a_start: 30,
                a_len: 54,
                r_start: 40,
                r_len: 54,
            },
            area_px: 1,
            area_mm2: 0.0,
            centroid_a: 56.5,
            centroid_col: 66.5,
            centroid_r_raw: 66.5,
        };
        let p = make_patch(&img, &c).unwrap();

        // Oracle: gather the 60×60 padded crop, then bilinear by hand.
        let mut crop = vec![0.0; 60 * 60];
        for i in 0..60 {
            for j in 0..60 {
                let a = (30 - 3 + i as isize).rem_euclid(128) as usize;
                let r = (40 - 3 + j as isize).clamp(0, 127) as usize;
                crop[i * 60 + j] = img.get(a, r);
            }
        }
        for i in 0..30 {
            for j in 0..30 {
                let sy = i as f64 * 59.0 / 29.0;
                let sx = j as f64 * 59.0 / 29.0;
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(59), (x0 + 1).min(59));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let want = (1.0 - fy) * ((1.0 - fx) * crop[y0 * 60 + x0] + fx * crop[y0 * 60 + x1])
                    + fy * ((1.0 - fx) * crop[y1 * 60 + x0] + fx * crop[y1 * 60 + x1]);
                assert!((p.pixels[i * 30 + j] - want).abs() <= 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn rotation_90_is_exact_permutation_and_180_twice_is_identity() {
        let mut rng = crate::rng::stream_rng(60, 0);
        let pixels: Vec<f64> = (0..30 * 30)
            .map(|_| rand::Rng::gen::<f64>(&mut rng))
            .collect();
        let p = Patch { side: 30, pixels };
        let r90 = rotate_patch(&p, 90.0).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                // 90° counterclockwise: out(i,j) = in(j, s-1-i).
                assert_eq!(r90.pixels[i * 30 + j], p.pixels[j * 30 + (29 - i)]);
            }
        }
        let r180 = rotate_patch(&p, 180.0).unwrap();
        let back = rotate_patch(&r180, 180.0).unwrap();
        for (a, b) in back.pixels.iter().zip(&p.pixels) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn rotation_set_is_exactly_six() {
        let p = Patch {
            side: 30,
            pixels: vec![0.5; 900],
        };
        assert_eq!(rotate_patch_set(&p).unwrap().len(), 6);
    }

    #[test]
    fn augmentation_bookkeeping_100_pos_700_neg() {
        let mk = |v: f64| Patch {
            side: 30,
            pixels: vec![v; 900],
        };
        let mut patches = Vec::new();
        for i in 0..100 {
            patches.push((mk(i as f64 / 100.0), true));
        }
        for i in 0..700 {
            patches.push((mk(i as f64 / 700.0), false));
        }
        let aug = augment_training_patches(&patches).unwrap();
        let pos = aug.iter().filter(|(_, l)| *l).count();
        let neg = aug.iter().filter(|(_, l)| !*l).count();
        assert_eq!(pos, 700);
        assert_eq!(neg, 700);
    }

    #[test]
    fn refine_mask_clears_only_negatives() {
        let m = mask_of(
            16,
            16,
            &[(2, 2), (2, 3), (2, 4), (10, 10), (10, 11), (11, 10)],
        );
        let cands = extract_candidates(&m, &geom(), 3);
        assert_eq!(cands.len(), 2);

        let all_pos = refine_mask(&m, &cands, &[true, true]);
        assert_eq!(all_pos, m);

        let all_neg = refine_mask(&m, &cands, &[false, false]);
        assert_eq!(all_neg.count_positive(), 0);

        // Union-of-positives oracle, pixelwise.
        let keep_first = refine_mask(&m, &cands, &[true, false]);
        let mut expect = FrameMask::zeros(16, 16);
        for &(a, r) in &cands[0].blob_pixels {
            expect.set(a, r, 1);
        }
        assert_eq!(keep_first, expect);

        // Refinement never adds pixels.
        for a in 0..16 {
            for r in 0..16 {
                if keep_first.get(a, r) == 1 {
                    assert_eq!(m.get(a, r), 1);
                }
            }
        }
    }

    #[test]
    fn classifier_same_seed_identical_and_batch_invariant() {
        let a = ClassifierModel::build(5);
        let b = ClassifierModel::build(5);
        assert_eq!(a.state_entries(), b.state_entries());

        let mut m = ClassifierModel::build(5);
        let mut rng = crate::rng::stream_rng(61, 0);
        let p1: Vec<f64> = (0..900).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let p2: Vec<f64> = (0..900).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let x1 = Tensor4::from_vec(1, 1, 30, 30, p1.clone());
        let x2 = Tensor4::from_vec(1, 1, 30, 30, p2.clone());
        let both = Tensor4::stack(&[x1.clone(), x2.clone()]);
        let y1 = m.forward(&x1, false).unwrap();
        let y2 = m.forward(&x2, false).unwrap();
        let yb = m.forward(&both, false).unwrap();
        assert_eq!(y1.sample(0), yb.sample(0));
        assert_eq!(y2.sample(0), yb.sample(1));

        // Probabilities sum to 1.
        let probs = classifier_probs(&mut m, &x1).unwrap();
        assert!((probs.at(0, 0, 0, 0) + probs.at(0, 1, 0, 0) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn single_class_training_is_config_error() {
        let p = Patch {
            side: 30,
            pixels: vec![0.5; 900],
        };
        let data = vec![(p.clone(), true), (p, true)];
        assert!(matches!(
            train_classifier(&data, None, &TrainSchedule::default(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn classifier_gradient_check() {
        use crate::nn::gradcheck::{max_rel_error, projection_loss};
        let mut rng = crate::rng::stream_rng(62, 0);
        let xv: Vec<f64> = (0..2 * 900)
            .map(|_| rand::Rng::gen::<f64>(&mut rng))
            .collect();
        let x = Tensor4::from_vec(2, 1, 30, 30, xv.clone());
        let mut m = ClassifierModel::build(9);
        let y = m.forward(&x, true).unwrap();
        let proj: Vec<f64> = (0..y.len())
            .map(|_| rand::Rng::gen::<f64>(&mut rng) - 0.5)
            .collect();
        let gy = Tensor4::from_vec(y.n(), y.c(), y.h(), y.w(), proj.clone());
        m.zero_grad();
        let gx = m.backward(&gy);
        let mut fresh = ClassifierModel::build(9);
        let err = max_rel_error(&xv, gx.as_slice(), 1e-5, |p| {
            let xt = Tensor4::from_vec(2, 1, 30, 30, p.to_vec());
            projection_loss(fresh.forward(&xt, true).unwrap().as_slice(), &proj)
        });
        assert!(err < 1e-4, "classifier input gradient: {err}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        let mut m = ClassifierModel::build(31);
        m.save(&path).unwrap();
        let mut loaded = ClassifierModel::load(&path).unwrap();
        let x = Tensor4::from_vec(1, 1, 30, 30, (0..900).map(|i| i as f64 / 900.0).collect());
        assert_eq!(
            m.forward(&x, false).unwrap(),
            loaded.forward(&x, false).unwrap()
        );
    }
}
