use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use luti_core::dataio::{lut_size_bytes, read_lut, write_lut};
use luti_core::lattice::Lattice3;
use luti_core::mlp::tabulate;
use luti_core::training::{Checkpoint, EmbeddingParams};

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Resolution to tabulate at (default: the checkpoint's)
    #[arg(long)]
    pub d: Option<usize>,
    /// `lo,hi` for all axes or six numbers `lo_x,lo_y,lo_z,hi_x,hi_y,hi_z`
    /// (default: the checkpoint's)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_bounds(b: &[f64]) -> Result<([f64; 3], [f64; 3])> {
    Ok(match b {
        [lo, hi] => ([*lo; 3], [*hi; 3]),
        [a, b, c, d, e, f] => ([*a, *b, *c], [*d, *e, *f]),
        _ => bail!("--bounds takes 2 or 6 numbers, got {}", b.len()),
    })
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.model;
    let (lo, hi) = match &a.bounds {
        Some(b) => parse_bounds(b)?,
        None => (model.lattice.lo(), model.lattice.hi()),
    };
    let lattice = Lattice3::new(a.d.unwrap_or(model.lattice.d()), lo, hi)?;
    let lut = match &model.embedding {
        EmbeddingParams::Mlp(mlp) => tabulate(mlp, &lattice)?,
        EmbeddingParams::Table { .. } => {
            if lattice != model.lattice {
                bail!("{} stores a raw table; it cannot be re-tabulated at another resolution or bounds", model.variant);
            }
            model.to_lut()?
        }
    };
    write_lut(&a.out, &lut)?;
    let payload = lut_size_bytes(lattice.d() as u64, 3, lut.k() as u64)?;
    println!(
        "wrote {} (D={}, K={}, payload {payload} bytes = {:.2} MB)",
        a.out.display(),
        lattice.d(),
        lut.k(),
        payload as f64 / (1u64 << 20) as f64
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub lut: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// Node index along z (default: the node closest to z = 0)
    #[arg(long)]
    pub z_index: Option<usize>,
    /// Write the CSV here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Header `y0..y{D-1}`, then one row per x node.
pub fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let lut = read_lut(&a.lut)?;
    let lat = *lut.lattice();
    let d = lat.d();
    if a.channel >= lut.k() {
        bail!("channel {} out of range (K = {})", a.channel, lut.k());
    }
    let iz = match a.z_index {
        Some(i) if i >= d => bail!("z index {i} out of range (D = {d})"),
        Some(i) => i,
        None => (0..d)
            .min_by(|&i, &j| {
                let z = |n| lat.node_position(lat.flat_index(0, 0, n))[2].abs();
                z(i).total_cmp(&z(j))
            })
            .expect("D >= 2"),
    };
    let mut s = (0..d).map(|iy| format!("y{iy}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for ix in 0..d {
        let row: Vec<String> = (0..d).map(|iy| format!("{}", lut.node(lat.flat_index(ix, iy, iz))[a.channel])).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    match &a.out {
        Some(p) => std::fs::write(p, s).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{s}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_forms() {
        assert_eq!(parse_bounds(&[-1.0, 1.0]).unwrap(), ([-1.0; 3], [1.0; 3]));
        assert_eq!(parse_bounds(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), ([0.0, 1.0, 2.0], [3.0, 4.0, 5.0]));
        assert!(parse_bounds(&[1.0, 2.0, 3.0]).is_err());
    }
}
