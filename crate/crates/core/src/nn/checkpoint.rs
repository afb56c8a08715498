//! Model checkpoint file format.
//!
//! Single binary file:
//!
//! ```text
//! magic   8 bytes  b"MVCKPT\0\0"
//! version u32 LE   (currently 1)
//! count   u32 LE   number of entries
//! per entry (manifest):
//!   name_len u16 LE, name bytes (UTF-8)
//!   ndim     u8
//!   dims     ndim x u32 LE
//! payload: for each entry in manifest order, prod(dims) x f64 LE
//! ```

use std::io::Read;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MVCKPT\0\0";
const VERSION: u32 = 1;

/// A named tensor: (name, shape, data).
pub type Entry = (String, Vec<usize>, Vec<f64>);

pub fn save_checkpoint(path: &Path, entries: &[Entry]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "checkpoint entry {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, _, data) in entries {
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Entry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rd = bytes.as_slice();

    let mut magic = [0u8; 8];
    rd.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = read_u32(&mut rd, path)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let count = read_u32(&mut rd, path)? as usize;

    let mut manifest: Vec<(String, Vec<usize>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut rd, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        rd.read_exact(&mut name_bytes)
            .map_err(|_| Error::Format(format!("{}: truncated manifest", path.display())))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("{}: non-UTF8 entry name", path.display())))?;
        let mut ndim = [0u8; 1];
        rd.read_exact(&mut ndim)
            .map_err(|_| Error::Format(format!("{}: truncated manifest", path.display())))?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u32(&mut rd, path)? as usize);
        }
        manifest.push((name, shape));
    }

    let mut entries = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut chunk = [0u8; 8];
        for _ in 0..n {
            rd.read_exact(&mut chunk)
                .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
            data.push(f64::from_le_bytes(chunk));
        }
        entries.push((name, shape, data));
    }
    Ok(entries)
}

fn read_u32(rd: &mut &[u8], path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    rd.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(rd: &mut &[u8], path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    rd.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    Ok(u16::from_le_bytes(b))
}
