use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use luti_core::dataio::{read_lut, read_xyz};
use luti_core::embed::Embedder;
use luti_core::lattice::Lattice3;
use luti_core::mlp::tabulate;
use luti_core::registration::{register, rotation_error_deg, translation_error};
use luti_core::se3::{exp, RigidTransform, Twist};
use luti_core::training::Checkpoint;
use luti_core::{JacobianMode, RegistrationConfig};

use crate::data::parse_numbers;

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Embedding table to register with
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub lut: Option<PathBuf>,
    /// Checkpoint whose embedding is used (tabulated when `--d` is given)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Tabulate the checkpoint's MLP at this resolution
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = JacobianMode::Canonical)]
    pub jacobian: JacobianMode,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Step of the finite-difference Jacobian
    #[arg(long, default_value_t = 1e-2)]
    pub t: f64,
    /// Expected transform: 16 or 12 numbers (row-major 4×4 or 3×4), or a
    /// 6-number twist (ω, v)
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

fn read_transform(path: &PathBuf) -> Result<RigidTransform> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = parse_numbers(&text).with_context(|| path.display().to_string())?;
    let g = match v.len() {
        6 => exp(&Twist([v[0], v[1], v[2], v[3], v[4], v[5]])),
        12 | 16 => {
            let mut m = [[0.0, 0.0, 0.0, 0.0], [0.0; 4], [0.0; 4], [0.0, 0.0, 0.0, 1.0]];
            for (i, x) in v.iter().enumerate() {
                m[i / 4][i % 4] = *x;
            }
            RigidTransform::from_matrix(m).with_context(|| path.display().to_string())?
        }
        n => bail!("{}: expected 6, 12 or 16 numbers, found {n}", path.display()),
    };
    Ok(g)
}

fn embedder(a: &RegisterArgs) -> Result<Box<dyn Embedder>> {
    if let Some(p) = &a.lut {
        if a.d.is_some() {
            bail!("--d applies to --checkpoint only");
        }
        return Ok(Box::new(read_lut(p)?));
    }
    let p = a.checkpoint.as_ref().expect("clap requires --lut or --checkpoint");
    let model = Checkpoint::load(p)?.model;
    Ok(match (a.d, model.embedding_mlp()) {
        (Some(d), Some(mlp)) => Box::new(tabulate(mlp, &Lattice3::new(d, model.lattice.lo(), model.lattice.hi())?)?),
        (Some(_), None) => bail!("{}: --d needs a checkpoint with an MLP embedding", p.display()),
        (None, _) => Box::new(model.backend()?),
    })
}

pub fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let source = read_xyz(&a.source)?;
    let target = read_xyz(&a.target)?;
    let truth = a.ground_truth.as_ref().map(read_transform).transpose()?;
    let e = embedder(a)?;
    let cfg = RegistrationConfig {
        mode: a.jacobian,
        max_iters: a.iters,
        tol: a.tol,
        t: a.t,
        ..Default::default()
    };
    let res = register(e.as_ref(), &source, &target, &cfg)?;
    println!("iteration,residual_norm");
    for (i, r) in res.residual_norms.iter().enumerate() {
        println!("{i},{r:.9e}");
    }
    println!("final_residual_norm {:.9e}", res.final_residual_norm);
    println!("iterations {} converged {}", res.iterations, res.converged);
    println!("G");
    for row in res.transform.to_matrix() {
        println!("{:.12} {:.12} {:.12} {:.12}", row[0], row[1], row[2], row[3]);
    }
    if let Some(t) = truth {
        println!("rotation_error_deg {:.6}", rotation_error_deg(&res.transform, &t));
        println!("translation_error {:.6e}", translation_error(&res.transform, &t));
    }
    Ok(())
}
