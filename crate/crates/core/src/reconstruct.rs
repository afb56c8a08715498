//! Linking per-frame detections into 3-D microvessel tracks, the
//! ≥-consecutive-frames filter, physical track measurements, and ASCII PLY
//! export for mesh viewers.

use serde::Serialize;

use crate::candidates::Candidate;
use crate::imaging::{FrameMask, PullbackMeta};
use crate::{Error, Result};

/// Matching gates for frame-to-frame candidate linking.
#[derive(Debug, Clone, Copy, serde::Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    /// Maximum radial centroid displacement between consecutive frames.
    pub max_dr_px: f64,
    /// Maximum circular θ displacement, in A-lines.
    pub max_dtheta_alines: f64,
    /// Tracks shorter than this many consecutive frames are dropped.
    pub min_frames: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            max_dr_px: 10.0,
            max_dtheta_alines: 12.0,
            min_frames: 3,
        }
    }
}

/// One matched cross-section of a track.
#[derive(Debug, Clone, Serialize)]
pub struct TrackNode {
    pub frame: usize,
    /// Circular A-line centroid.
    pub centroid_a: f64,
    /// Radial centroid in raw (un-shifted) coordinates.
    pub centroid_r: f64,
    pub area_mm2: f64,
}

/// A chain of candidates across strictly consecutive frames.
#[derive(Debug, Clone, Serialize)]
pub struct MicrovesselTrack {
    pub nodes: Vec<TrackNode>,
    /// (frame, candidate index) of each node, for mask bookkeeping.
    pub candidate_refs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrackMetrics {
    /// Length along the 3-D polyline through the node centroids.
    pub length_mm: f64,
    /// Purely axial extent (frame span × frame spacing).
    pub axial_extent_mm: f64,
    /// Mean equivalent-circle diameter over nodes, in μm.
    pub mean_diameter_um: f64,
}

fn circ_delta(a: f64, b: f64, n: f64) -> f64 {
    let d = (a - b).rem_euclid(n);
    d.min(n - d)
}

/// Greedy nearest-centroid linking between consecutive frames. A match is
/// accepted iff Δr and circular Δθ pass the gates; each candidate joins at
/// most one track; unmatched candidates start new tracks.
pub fn link_tracks(
    per_frame: &[Vec<Candidate>],
    meta: &PullbackMeta,
    cfg: &LinkConfig,
) -> Vec<MicrovesselTrack> {
    let n_alines = meta.alines_per_frame as f64;
    let mut tracks: Vec<MicrovesselTrack> = Vec::new();
    // Indices of tracks whose last node sits on the previous frame.
    let mut active: Vec<usize> = Vec::new();

    for (f, candidates) in per_frame.iter().enumerate() {
        // All admissible (track, candidate) pairs with their distances.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, &track_idx) in active.iter().enumerate() {
            let last = tracks[track_idx].nodes.last().unwrap();
            for (ci, cand) in candidates.iter().enumerate() {
                let dr = (cand.centroid_r_raw - last.centroid_r).abs();
                let da = circ_delta(cand.centroid_a, last.centroid_a, n_alines);
                if dr <= cfg.max_dr_px && da <= cfg.max_dtheta_alines {
                    pairs.push(((dr * dr + da * da).sqrt(), ti, ci));
                }
            }
        }
        pairs.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut track_taken = vec![false; active.len()];
        let mut cand_taken = vec![false; candidates.len()];
        let mut next_active = Vec::new();
        for (_, ti, ci) in pairs {
            if track_taken[ti] || cand_taken[ci] {
                continue;
            }
            track_taken[ti] = true;
            cand_taken[ci] = true;
            let track_idx = active[ti];
            let c = &candidates[ci];
            tracks[track_idx].nodes.push(TrackNode {
                frame: f,
                centroid_a: c.centroid_a,
                centroid_r: c.centroid_r_raw,
                area_mm2: c.area_mm2,
            });
            tracks[track_idx].candidate_refs.push((f, ci));
            next_active.push(track_idx);
        }
        for (ci, c) in candidates.iter().enumerate() {
            if cand_taken[ci] {
                continue;
            }
            tracks.push(MicrovesselTrack {
                nodes: vec![TrackNode {
                    frame: f,
                    centroid_a: c.centroid_a,
                    centroid_r: c.centroid_r_raw,
                    area_mm2: c.area_mm2,
                }],
                candidate_refs: vec![(f, ci)],
            });
            next_active.push(tracks.len() - 1);
        }
        active = next_active;
    }
    tracks
}

/// Drops tracks spanning fewer than `min_frames` consecutive frames.
/// Returns (kept, dropped). Idempotent on the kept set.
pub fn filter_min_frames(
    tracks: Vec<MicrovesselTrack>,
    min_frames: usize,
) -> (Vec<MicrovesselTrack>, Vec<MicrovesselTrack>) {
    tracks
        .into_iter()
        .partition(|t| t.nodes.len() >= min_frames)
}

/// Clears the blob pixels of the given tracks from the per-frame masks
/// (used to remove too-short tracks from the final segmentation).
pub fn remove_track_pixels(
    masks: &mut [FrameMask],
    per_frame: &[Vec<Candidate>],
    tracks: &[MicrovesselTrack],
) {
    for t in tracks {
        for &(f, ci) in &t.candidate_refs {
            for &(a, r) in &per_frame[f][ci].blob_pixels {
                masks[f].set(a, r, 0);
            }
        }
    }
}

/// Physical length (3-D polyline and axial chord) and mean equivalent
/// diameter of a track.
pub fn track_metrics(track: &MicrovesselTrack, meta: &PullbackMeta) -> Result<TrackMetrics> {
    if track.nodes.len() < 2 {
        return Err(Error::Contract(
            "track metrics need at least 2 nodes".into(),
        ));
    }
    let to_xyz = |n: &TrackNode| {
        let r_mm = (n.centroid_r + 0.5) * meta.r_pixel_mm();
        let theta = n.centroid_a * meta.d_theta_rad();
        (
            r_mm * theta.cos(),
            r_mm * theta.sin(),
            n.frame as f64 * meta.frame_spacing_mm,
        )
    };
    let mut length = 0.0;
    for w in track.nodes.windows(2) {
        let (x0, y0, z0) = to_xyz(&w[0]);
        let (x1, y1, z1) = to_xyz(&w[1]);
        length += ((x1 - x0).powi(2) + (y1 - y0).powi(2) + (z1 - z0).powi(2)).sqrt();
    }
    let axial =
        (track.nodes.last().unwrap().frame - track.nodes[0].frame) as f64 * meta.frame_spacing_mm;
    let mean_diameter_um = track
        .nodes
        .iter()
        .map(|n| 2.0 * (n.area_mm2 / std::f64::consts::PI).sqrt() * 1000.0)
        .sum::<f64>()
        / track.nodes.len() as f64;
    Ok(TrackMetrics {
        length_mm: length,
        axial_extent_mm: axial,
        mean_diameter_um,
    })
}

/// Summary row for the track CSV.
#[derive(Debug, Clone, Serialize)]
pub struct TrackSummary {
    pub track_id: usize,
    pub n_frames: usize,
    pub length_mm: f64,
    pub axial_extent_mm: f64,
    pub mean_diameter_um: f64,
}

pub fn write_tracks_csv(path: &std::path::Path, rows: &[TrackSummary]) -> Result<()> {
    let mut s = String::from("track_id,n_frames,length_mm,axial_extent_mm,mean_diameter_um\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.4}\n",
            r.track_id, r.n_frames, r.length_mm, r.axial_extent_mm, r.mean_diameter_um
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Exports lumen rings (one per frame, subsampled every `ring_step` A-lines)
/// and per-track vertex chains with edges as ASCII PLY 1.0, units mm.
/// Lumen points are red, track chains green.
pub fn export_ply(
    lumen_contours: &[Vec<usize>],
    tracks: &[MicrovesselTrack],
    meta: &PullbackMeta,
    ring_step: usize,
    path: &std::path::Path,
) -> Result<()> {
    if ring_step == 0 {
        return Err(Error::Contract("ring_step must be >= 1".into()));
    }
    let mut vertices: Vec<(f64, f64, f64, u8, u8, u8)> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();

    for (f, contour) in lumen_contours.iter().enumerate() {
        let z = f as f64 * meta.frame_spacing_mm;
        for a in (0..contour.len()).step_by(ring_step) {
            let r_mm = (contour[a] as f64 + 0.5) * meta.r_pixel_mm();
            let theta = a as f64 * meta.d_theta_rad();
            vertices.push((r_mm * theta.cos(), r_mm * theta.sin(), z, 200, 40, 40));
        }
    }
    for t in tracks {
        let base = vertices.len();
        for n in &t.nodes {
            let r_mm = (n.centroid_r + 0.5) * meta.r_pixel_mm();
            let theta = n.centroid_a * meta.d_theta_rad();
            vertices.push((
                r_mm * theta.cos(),
                r_mm * theta.sin(),
                n.frame as f64 * meta.frame_spacing_mm,
                40,
                200,
                40,
            ));
        }
        for i in 1..t.nodes.len() {
            edges.push((base + i - 1, base + i));
        }
    }

    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", vertices.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str(&format!("element edge {}\n", edges.len()));
    s.push_str("property int vertex1\nproperty int vertex2\n");
    s.push_str("end_header\n");
    for (x, y, z, r, g, b) in &vertices {
        s.push_str(&format!("{x:.6} {y:.6} {z:.6} {r} {g} {b}\n"));
    }
    for (v1, v2) in &edges {
        s.push_str(&format!("{v1} {v2}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
