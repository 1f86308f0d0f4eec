//! Point clouds, mesh sampling, synthetic datasets and file formats.

mod cloud;
mod lutfile;
mod mesh;
mod synth;
mod xyz;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use cloud::{normalize, PointCloud};
pub use lutfile::{lut_from_bytes, lut_size_bytes, lut_to_bytes, read_lut, write_lut, HEADER_BYTES, MAGIC, VERSION};
pub use mesh::{parse_off, read_off, sample_mesh, Mesh};
pub use synth::{sample_shape, synth_dataset, synth_dataset_with, synth_instance, Shape, SynthParams};
pub use xyz::{format_xyz, parse_xyz, read_xyz, write_xyz};

/// Writes `value` as JSON. Floats are printed with round-trip precision.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer(&mut w, value)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
