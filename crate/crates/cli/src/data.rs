//! Dataset and point-cloud loading shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use luti_core::dataio::{normalize, read_off, read_xyz, sample_mesh, synth_dataset, Shape};
use luti_core::PointCloud;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Args, Clone, Debug)]
pub struct DataArgs {
    /// `synth` for generated shapes, or a directory laid out as
    /// `<class>/train/*.{xyz,off}` and `<class>/test/*.{xyz,off}`
    #[arg(long, default_value = "synth")]
    pub data: String,
    /// Shapes used by `--data synth`
    #[arg(long, value_delimiter = ',', default_value = "sphere,cube,cylinder,torus")]
    pub classes: Vec<Shape>,
    /// Training clouds per class (synthetic data)
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Test clouds per class (synthetic data)
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    /// Points per cloud; also the sample count for OFF meshes
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Dataset> {
        if self.data == "synth" {
            let train = synth_dataset(&self.classes, self.per_class, self.points, self.data_seed)?;
            // distinct stream for the held-out split
            let test = synth_dataset(&self.classes, self.test_per_class, self.points, self.data_seed ^ 0x7E57)?;
            Ok(Dataset {
                class_names: self.classes.iter().map(|s| s.name().to_string()).collect(),
                train,
                test,
            })
        } else {
            load_dir(Path::new(&self.data), self.points, self.data_seed)
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading {}", dir.display()))?;
    out.sort();
    Ok(out)
}

fn load_dir(root: &Path, points: usize, seed: u64) -> Result<Dataset> {
    let classes: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.len() < 2 {
        bail!("{}: need at least two class directories", root.display());
    }
    let mut ds = Dataset {
        class_names: Vec::new(),
        train: Vec::new(),
        test: Vec::new(),
    };
    let mut file_no = 0u64;
    for (label, dir) in classes.iter().enumerate() {
        ds.class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for (split, out) in [("train", &mut ds.train), ("test", &mut ds.test)] {
            let sub = dir.join(split);
            if !sub.is_dir() {
                continue;
            }
            for f in sorted_entries(&sub)? {
                if !is_cloud_file(&f) {
                    continue;
                }
                let cloud = read_cloud(&f, points, seed.wrapping_add(file_no))?;
                out.push(normalize(&cloud).with_context(|| f.display().to_string())?.with_label(Some(label)));
                file_no += 1;
            }
        }
    }
    if ds.train.is_empty() {
        bail!("{}: no training clouds found", root.display());
    }
    Ok(ds)
}

fn is_cloud_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("xyz" | "off" | "txt"))
}

/// Reads an XYZ cloud, or samples `points` points from an OFF mesh.
pub fn read_cloud(path: &Path, points: usize, seed: u64) -> Result<PointCloud> {
    let cloud = match path.extension().and_then(|e| e.to_str()) {
        Some("off") => {
            let mesh = read_off(path)?;
            sample_mesh(&mesh, points, &mut ChaCha8Rng::seed_from_u64(seed)).with_context(|| path.display().to_string())?
        }
        _ => read_xyz(path)?,
    };
    Ok(cloud)
}

/// Parses whitespace- or comma-separated numbers.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(str::to_owned).collect::<Vec<_>>())
        .map(|t| t.parse::<f64>().with_context(|| format!("not a number: {t:?}")))
        .collect()
}
