//! Binary PGM (P5) read/write.
//!
//! 16-bit samples are big-endian, per the netpbm convention.

use std::io::Read;
use std::path::Path;

use crate::{Error, Result};

pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Row-major samples, already widened to u16.
    pub samples: Vec<u16>,
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<()> {
    debug_assert_eq!(samples.len(), width * height);
    let mut buf = Vec::with_capacity(32 + samples.len() * 2);
    buf.extend_from_slice(format!("P5\n{width} {height}\n65535\n").as_bytes());
    for &s in samples {
        buf.extend_from_slice(&s.to_be_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, samples: &[u8]) -> Result<()> {
    debug_assert_eq!(samples.len(), width * height);
    let mut buf = Vec::with_capacity(32 + samples.len());
    buf.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    buf.extend_from_slice(samples);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    let mut cur = bytes;
    let magic = next_token(&mut cur).ok_or("missing magic")?;
    if magic != b"P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let width = parse_int(next_token(&mut cur).ok_or("missing width")?)?;
    let height = parse_int(next_token(&mut cur).ok_or("missing height")?)?;
    let maxval = parse_int(next_token(&mut cur).ok_or("missing maxval")?)? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if cur.is_empty() {
        return Err("missing raster".into());
    }
    cur = &cur[1..];

    let n = width * height;
    let samples = if maxval > 255 {
        if cur.len() < n * 2 {
            return Err(format!("raster truncated: {} < {}", cur.len(), n * 2));
        }
        let mut raster = Vec::with_capacity(n);
        let mut rd = cur;
        let mut pair = [0u8; 2];
        for _ in 0..n {
            rd.read_exact(&mut pair).map_err(|e| e.to_string())?;
            raster.push(u16::from_be_bytes(pair));
        }
        raster
    } else {
        if cur.len() < n {
            return Err(format!("raster truncated: {} < {}", cur.len(), n));
        }
        cur[..n].iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval,
        samples,
    })
}

/// Next whitespace-delimited header token, skipping `#` comment lines.
fn next_token<'a>(cur: &mut &'a [u8]) -> Option<&'a [u8]> {
    loop {
        while let Some(&b) = cur.first() {
            if b.is_ascii_whitespace() {
                *cur = &cur[1..];
            } else {
                break;
            }
        }
        if cur.first() == Some(&b'#') {
            while let Some(&b) = cur.first() {
                *cur = &cur[1..];
                if b == b'\n' {
                    break;
                }
            }
            continue;
        }
        break;
    }
    if cur.is_empty() {
        return None;
    }
    let end = cur
        .iter()
        .position(|b| b.is_ascii_whitespace())
        .unwrap_or(cur.len());
    let (tok, rest) = cur.split_at(end);
    *cur = rest;
    Some(tok)
}

fn parse_int(tok: &[u8]) -> std::result::Result<usize, String> {
    std::str::from_utf8(tok)
        .map_err(|_| "non-ascii header token".to_string())?
        .parse::<usize>()
        .map_err(|e| format!("bad header integer: {e}"))
}

/// Writes and reads intensities as 16-bit gray: `q = round(v * 65535)`.
pub fn quantize16(v: f64) -> u16 {
    (v * 65535.0).round().clamp(0.0, 65535.0) as u16
}

pub fn dequantize16(q: u16) -> f64 {
    q as f64 / 65535.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_roundtrip_error_bound() {
        // Quantize–dequantize error per pixel <= 1/(2*65535).
        let bound = 0.5 / 65535.0;
        for i in 0..=10_000 {
            let v = i as f64 / 10_000.0;
            let err = (dequantize16(quantize16(v)) - v).abs();
            assert!(err <= bound + 1e-15, "v={v} err={err}");
        }
    }

    #[test]
    fn pgm16_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let samples: Vec<u16> = (0..12).map(|i| (i * 5000) as u16).collect();
        write_pgm16(&p, 4, 3, &samples).unwrap();
        let rd = read_pgm(&p).unwrap();
        assert_eq!((rd.width, rd.height, rd.maxval), (4, 3, 65535));
        assert_eq!(rd.samples, samples);
    }

    #[test]
    fn pgm_rejects_wrong_magic_and_truncation() {
        assert!(parse_pgm(b"P2\n2 2\n255\n....").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n..").is_err());
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let rd = parse_pgm(&bytes).unwrap();
        assert_eq!(rd.samples, vec![7, 9]);
    }
}
