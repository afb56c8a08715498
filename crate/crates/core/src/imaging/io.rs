//! Pullback directory I/O.
//!
//! Layout: `meta.json` sidecar + `frame_%05d.pgm` (P5, 16-bit big-endian,
//! rows = A-lines) + optional `mask_%05d.pgm` (P5, 8-bit, values 0/1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pgm;
use super::{FrameMask, PolarFrame, PolarPullback, PullbackMeta};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    alines_per_frame: usize,
    samples_per_aline: usize,
    r_pixel_um: f64,
    frame_spacing_mm: f64,
    catheter_offset_px: usize,
    segment_id: String,
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.pgm")
}

pub fn mask_file_name(i: usize) -> String {
    format!("mask_{i:05}.pgm")
}

/// Writes a pullback (and optional aligned masks) to `dir` in the canonical format.
/// Lossless for intensities already quantized to 16 bits.
pub fn save_pullback(p: &PolarPullback, masks: Option<&[FrameMask]>, dir: &Path) -> Result<()> {
    if let Some(ms) = masks {
        if ms.len() != p.frames.len() {
            return Err(Error::Contract(format!(
                "{} masks for {} frames",
                ms.len(),
                p.frames.len()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sidecar = Sidecar {
        alines_per_frame: p.meta.alines_per_frame,
        samples_per_aline: p.meta.samples_per_aline,
        r_pixel_um: p.meta.r_pixel_um,
        frame_spacing_mm: p.meta.frame_spacing_mm,
        catheter_offset_px: p.meta.catheter_offset_px,
        segment_id: p.segment_id.clone(),
    };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar encode: {e}")))?;
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

    for (i, f) in p.frames.iter().enumerate() {
        let samples: Vec<u16> = f.as_slice().iter().map(|&v| pgm::quantize16(v)).collect();
        pgm::write_pgm16(&dir.join(frame_file_name(i)), f.cols(), f.rows(), &samples)?;
    }
    if let Some(ms) = masks {
        for (i, m) in ms.iter().enumerate() {
            pgm::write_pgm8(
                &dir.join(mask_file_name(i)),
                m.cols(),
                m.rows(),
                m.as_slice(),
            )?;
        }
    }
    Ok(())
}

/// Loads a pullback directory. Frames come back in filename-sorted order with
/// intensities rescaled to [0, 1] from the stored 16-bit range. Masks are
/// returned when every frame has one.
pub fn load_pullback(dir: &Path) -> Result<(PolarPullback, Option<Vec<FrameMask>>)> {
    let meta_path = dir.join("meta.json");
    let json = std::fs::read_to_string(&meta_path)
        .map_err(|_| Error::Format(format!("missing sidecar {}", meta_path.display())))?;
    let sidecar: Sidecar = serde_json::from_str(&json)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    let meta = PullbackMeta {
        alines_per_frame: sidecar.alines_per_frame,
        samples_per_aline: sidecar.samples_per_aline,
        r_pixel_um: sidecar.r_pixel_um,
        frame_spacing_mm: sidecar.frame_spacing_mm,
        catheter_offset_px: sidecar.catheter_offset_px,
    };
    meta.validate()?;

    let mut frame_files = Vec::new();
    let mut mask_files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("frame_") && name.ends_with(".pgm") {
            frame_files.push(entry.path());
        } else if name.starts_with("mask_") && name.ends_with(".pgm") {
            mask_files.push(entry.path());
        }
    }
    frame_files.sort();
    mask_files.sort();

    let mut frames = Vec::with_capacity(frame_files.len());
    for path in &frame_files {
        let img = pgm::read_pgm(path)?;
        if img.height != meta.alines_per_frame || img.width != meta.samples_per_aline {
            return Err(Error::CorruptInput(format!(
                "{}: frame is {}x{}, sidecar says {}x{}",
                path.display(),
                img.height,
                img.width,
                meta.alines_per_frame,
                meta.samples_per_aline
            )));
        }
        let scale = img.maxval as f64;
        let data: Vec<f64> = img.samples.iter().map(|&s| s as f64 / scale).collect();
        frames.push(PolarFrame::new(img.height, img.width, data)?);
    }

    let masks = if mask_files.is_empty() {
        None
    } else {
        if mask_files.len() != frame_files.len() {
            return Err(Error::CorruptInput(format!(
                "{} masks for {} frames in {}",
                mask_files.len(),
                frame_files.len(),
                dir.display()
            )));
        }
        let mut masks = Vec::with_capacity(mask_files.len());
        for path in &mask_files {
            let img = pgm::read_pgm(path)?;
            if img.height != meta.alines_per_frame || img.width != meta.samples_per_aline {
                return Err(Error::CorruptInput(format!(
                    "{}: mask is {}x{}, sidecar says {}x{}",
                    path.display(),
                    img.height,
                    img.width,
                    meta.alines_per_frame,
                    meta.samples_per_aline
                )));
            }
            let labels: Vec<u8> = img.samples.iter().map(|&s| s.min(255) as u8).collect();
            masks.push(FrameMask::new(img.height, img.width, labels)?);
        }
        Some(masks)
    };

    let segment_id = sidecar.segment_id;
    Ok((PolarPullback::new(meta, frames, segment_id)?, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn quantized_test_pullback(n_frames: usize) -> PolarPullback {
        let meta = PullbackMeta {
            alines_per_frame: 16,
            samples_per_aline: 300,
            ..PullbackMeta::default()
        };
        let mut rng = crate::rng::stream_rng(11, 0);
        let frames = (0..n_frames)
            .map(|_| {
                let data: Vec<f64> = (0..16 * 300)
                    .map(|_| pgm::dequantize16(rng.gen::<u16>()))
                    .collect();
                PolarFrame::new(16, 300, data).unwrap()
            })
            .collect();
        PolarPullback::new(meta, frames, "seg-a".into()).unwrap()
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = quantized_test_pullback(3);
        save_pullback(&p, None, dir.path()).unwrap();
        let (q, masks) = load_pullback(dir.path()).unwrap();
        assert!(masks.is_none());
        assert_eq!(q.meta, p.meta);
        assert_eq!(q.segment_id, p.segment_id);
        assert_eq!(q.frames, p.frames);
    }

    #[test]
    fn frame_count_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = quantized_test_pullback(50);
        save_pullback(&p, None, dir.path()).unwrap();
        let (q, _) = load_pullback(dir.path()).unwrap();
        assert_eq!(q.n_frames(), 50);
    }

    #[test]
    fn empty_pullback_writes_sidecar_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = quantized_test_pullback(0);
        save_pullback(&p, None, dir.path()).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let (q, _) = load_pullback(dir.path()).unwrap();
        assert_eq!(q.n_frames(), 0);
    }

    #[test]
    fn single_frame_pullback_writes_one_frame_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = quantized_test_pullback(1);
        save_pullback(&p, None, dir.path()).unwrap();
        assert!(dir.path().join("frame_00000.pgm").exists());
        assert!(!dir.path().join("frame_00001.pgm").exists());
    }

    #[test]
    fn missing_sidecar_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_pullback(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn dimension_mismatch_is_corrupt_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = quantized_test_pullback(1);
        save_pullback(&p, None, dir.path()).unwrap();
        // Overwrite the frame with one of the wrong height (400 rows vs 16).
        let samples = vec![0u16; 400 * 300];
        pgm::write_pgm16(&dir.path().join(frame_file_name(0)), 300, 400, &samples).unwrap();
        assert!(matches!(
            load_pullback(dir.path()),
            Err(Error::CorruptInput(_))
        ));
    }

    #[test]
    fn masks_roundtrip_and_partial_masks_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = quantized_test_pullback(2);
        let mut m0 = FrameMask::zeros(16, 300);
        m0.set(3, 40, 1);
        let masks = vec![m0, FrameMask::zeros(16, 300)];
        save_pullback(&p, Some(&masks), dir.path()).unwrap();
        let (_, loaded) = load_pullback(dir.path()).unwrap();
        assert_eq!(loaded.unwrap(), masks);

        std::fs::remove_file(dir.path().join(mask_file_name(1))).unwrap();
        assert!(matches!(
            load_pullback(dir.path()),
            Err(Error::CorruptInput(_))
        ));
    }
}
