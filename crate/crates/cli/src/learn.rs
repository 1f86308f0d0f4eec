//! Training, classification, ablation sweeps and synthetic data export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use luti_core::dataio::{synth_dataset, write_xyz, Shape};
use luti_core::lattice::Lattice3;
use luti_core::training::{evaluate, train, train_from, Checkpoint, Classifier, EpochStats, Model, TrainConfig, Variant};

use crate::data::{read_cloud, DataArgs};

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    #[arg(long, default_value_t = Variant::LutiMlpE2e)]
    pub variant: Variant,
    /// Lattice resolution per axis
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Embedding width
    #[arg(long, default_value_t = 128)]
    pub k: usize,
    /// Hidden widths of the embedding MLP
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub head_hidden: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total-variation weight for direct variants; `--tv` alone means 1.0
    #[arg(long, num_args = 0..=1, default_missing_value = "1.0", default_value_t = 0.0)]
    pub tv: f64,
    /// Exponent of the total-variation penalty (1 or 2)
    #[arg(long, default_value_t = 2)]
    pub tv_p: u32,
    /// Disable rotation and jitter augmentation
    #[arg(long)]
    pub no_augment: bool,
    /// Batch-normalize the embedding MLP (mlp and approx variants)
    #[arg(long)]
    pub batch_norm: bool,
}

impl ModelArgs {
    pub fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            variant: self.variant,
            d: self.d,
            k: self.k,
            embed_hidden: self.hidden.clone(),
            head_hidden: self.head_hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            tv_weight: self.tv,
            tv_p: self.tv_p,
            seed: self.seed,
            augment: !self.no_augment,
            batch_norm: self.batch_norm,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Start from this checkpoint's parameters (e.g. a trained `mlp`)
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Also write the checkpoint before the first update
    #[arg(long)]
    pub save_init: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    pub metrics: PathBuf,
    /// Suppress per-epoch progress lines
    #[arg(long, short)]
    pub quiet: bool,
}

pub fn metrics_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,lr,loss,train_acc,test_acc\n");
    for e in history {
        let test = e.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:e},{:.8},{:.6},{}", e.epoch, e.lr, e.loss, e.train_acc, test);
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.model.config()?;
    let ds = a.data.load()?;
    let classes = ds.class_names.len();
    let initial = match &a.init {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.model.classes() != classes {
                bail!("{}: checkpoint has {} classes, data has {classes}", p.display(), ck.model.classes());
            }
            ck.model.as_variant(cfg.variant, cfg.lattice()?)?
        }
        None => Model::init(&cfg, classes)?,
    };
    if let Some(p) = &a.save_init {
        Checkpoint {
            config: cfg.clone(),
            class_names: ds.class_names.clone(),
            model: initial.clone(),
        }
        .save(p)?;
    }
    let test = (!ds.test.is_empty()).then_some(&ds.test[..]);
    let quiet = a.quiet;
    let (model, history) = train_from(&cfg, initial, &ds.train, test, |e| {
        if !quiet {
            let t = e.test_acc.map(|v| format!(" test_acc {v:.4}")).unwrap_or_default();
            println!("epoch {:>3} lr {:.2e} loss {:.5} train_acc {:.4}{t}", e.epoch, e.lr, e.loss, e.train_acc);
        }
    })?;
    Checkpoint {
        config: cfg,
        class_names: ds.class_names,
        model,
    }
    .save(&a.out)?;
    write_text(&a.metrics, &metrics_csv(&history))?;
    match history.last().and_then(|e| e.test_acc) {
        Some(acc) => println!("final test accuracy {acc:.4}"),
        None => println!("trained 0 epochs"),
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Read the model as another variant, e.g. `luti_mlp_approx`
    #[arg(long = "as")]
    pub as_variant: Option<Variant>,
    /// Lattice resolution for `--as`
    #[arg(long)]
    pub d: Option<usize>,
    /// Cloud files (XYZ or OFF); without them the test split of `--data` is scored
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

fn reinterpret(model: Model, variant: Option<Variant>, d: Option<usize>) -> Result<Model> {
    if variant.is_none() && d.is_none() {
        return Ok(model);
    }
    let lattice = match d {
        Some(d) => Lattice3::new(d, model.lattice.lo(), model.lattice.hi())?,
        None => model.lattice,
    };
    Ok(model.as_variant(variant.unwrap_or(model.variant), lattice)?)
}

pub fn cmd_classify(a: &ClassifyArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = reinterpret(ck.model, a.as_variant, a.d)?;
    if a.files.is_empty() {
        let ds = a.data.load()?;
        if ds.class_names.len() != model.classes() {
            bail!("data has {} classes, model {}", ds.class_names.len(), model.classes());
        }
        let acc = evaluate(&model, &ds.test)?;
        println!("{} D={} accuracy {acc:.4} on {} clouds", model.variant, model.lattice.d(), ds.test.len());
        return Ok(());
    }
    let clf = Classifier::from_model(&model)?;
    println!("file,class");
    for f in &a.files {
        let cloud = luti_core::dataio::normalize(&read_cloud(f, a.data.points, a.data.data_seed)?)
            .with_context(|| f.display().to_string())?;
        let c = clf.predict(&cloud)?;
        let name = ck.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        println!("{},{name}", f.display());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "mlp,lut_mlp_approx,luti_mlp_approx,lut_mlp_e2e,luti_mlp_e2e,lut_direct,luti_direct")]
    pub variants: Vec<Variant>,
    #[arg(long = "ds", value_delimiter = ',', default_value = "4,8,16")]
    pub ds: Vec<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn cmd_ablation(a: &AblationArgs) -> Result<()> {
    let base = a.model.config()?;
    let ds = a.data.load()?;
    if ds.test.is_empty() {
        bail!("ablation needs a test split");
    }
    let fit = |variant: Variant, d: usize| -> Result<Model> {
        let mut cfg = TrainConfig { variant, d, ..base.clone() };
        if !variant.is_direct() {
            cfg.tv_weight = 0.0;
        }
        eprintln!("training {variant} D={d}");
        Ok(train(&cfg, &ds.train, None, |_| {})?.0)
    };
    // approx variants read the baseline MLP, which is trained once
    let needs_mlp = a.variants.iter().any(|v| *v == Variant::Mlp || v.is_approx());
    let mlp = if needs_mlp { Some(fit(Variant::Mlp, base.d)?) } else { None };
    let mut rows = Vec::new();
    for &v in &a.variants {
        if v == Variant::Mlp {
            let acc = evaluate(mlp.as_ref().expect("trained"), &ds.test)?;
            rows.push((v, None, acc));
            continue;
        }
        for &d in &a.ds {
            let model = if v.is_approx() {
                mlp.as_ref().expect("trained").as_variant(v, Lattice3::new(d, base.lo, base.hi)?)?
            } else {
                fit(v, d)?
            };
            rows.push((v, Some(d), evaluate(&model, &ds.test)?));
        }
    }
    let mut csv = String::from("variant,d,test_acc\n");
    println!("{:<18} {:>4} {:>9}", "variant", "D", "accuracy");
    for (v, d, acc) in &rows {
        let ds = d.map(|d| d.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{v},{ds},{acc:.6}");
        println!("{:<18} {:>4} {:>9.4}", v.name(), if ds.is_empty() { "-" } else { &ds }, acc);
    }
    if let Some(p) = &a.csv {
        write_text(p, &csv)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "sphere,cube,cylinder,torus")]
    pub classes: Vec<Shape>,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let splits = [
        ("train", synth_dataset(&a.classes, a.per_class, a.points, a.seed)?),
        ("test", synth_dataset(&a.classes, a.test_per_class, a.points, a.seed ^ 0x7E57)?),
    ];
    let mut n = 0;
    for (split, clouds) in &splits {
        let mut next = vec![0usize; a.classes.len()];
        for c in clouds {
            let label = c.label().expect("synthetic clouds are labeled");
            let dir = a.out.join(a.classes[label].name()).join(split);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write_xyz(dir.join(format!("{:05}.xyz", next[label])), c)?;
            next[label] += 1;
            n += 1;
        }
    }
    println!("wrote {n} clouds to {}", a.out.display());
    Ok(())
}
