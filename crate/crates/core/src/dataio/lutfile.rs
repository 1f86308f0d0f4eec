//! Binary LUT files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `LUTI`                            |
//! | 4      | 4    | version (`u32`, currently 1)            |
//! | 8      | 4    | `D` (`u32`)                             |
//! | 12     | 4    | `K` (`u32`)                             |
//! | 16     | 24   | bounds: `lo_x lo_y lo_z hi_x hi_y hi_z` (`f32`) |
//! | 40     | 4·D³·K | payload (`f32`), same index layout as [`Lut`] |

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{Lattice3, Lut};

pub const MAGIC: [u8; 4] = *b"LUTI";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 40;

/// Bytes needed to store a `d^m × k` table of 4-byte floats.
pub fn lut_size_bytes(d: u64, m: u32, k: u64) -> Result<u64> {
    if d < 2 || m < 1 || k < 1 {
        return Err(Error::InvalidArgument(format!("lut size needs d ≥ 2, m ≥ 1, k ≥ 1 (got d={d}, m={m}, k={k})")));
    }
    d.checked_pow(m)
        .and_then(|n| n.checked_mul(k))
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::Overflow("lut size"))
}

/// Serializes `lut` to the binary format. Bounds are stored as `f32`.
pub fn lut_to_bytes(lut: &Lut) -> Result<Vec<u8>> {
    let lat = lut.lattice();
    let d = u32::try_from(lat.d()).map_err(|_| Error::Overflow("lattice resolution"))?;
    let k = u32::try_from(lut.k()).map_err(|_| Error::Overflow("channel count"))?;
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * lut.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for b in lat.lo().into_iter().chain(lat.hi()) {
        out.extend_from_slice(&(b as f32).to_le_bytes());
    }
    for v in lut.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn lut_from_bytes(bytes: &[u8]) -> Result<Lut> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Format(format!("header needs {HEADER_BYTES} bytes, file has {}", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"LUTI\"", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let d = u32_at(bytes, 8) as usize;
    let k = u32_at(bytes, 12) as usize;
    let mut bounds = [0.0f64; 6];
    for (i, b) in bounds.iter_mut().enumerate() {
        *b = f32_at(bytes, 16 + 4 * i) as f64;
    }
    let lattice = Lattice3::new(d, [bounds[0], bounds[1], bounds[2]], [bounds[3], bounds[4], bounds[5]])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if k == 0 {
        return Err(Error::Format("bad header: K = 0".into()));
    }
    let expected = lut_size_bytes(d as u64, 3, k as u64)?;
    let expected = usize::try_from(expected).map_err(|_| Error::Overflow("lut payload"))?;
    let actual = bytes.len() - HEADER_BYTES;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::Format(format!("{} trailing bytes after payload", actual - expected)));
    }
    let data = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Lut::new(lattice, k, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_lut(path: impl AsRef<Path>, lut: &Lut) -> Result<()> {
    let path = path.as_ref();
    let bytes = lut_to_bytes(lut)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_lut(path: impl AsRef<Path>) -> Result<Lut> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    lut_from_bytes(&bytes)
}
