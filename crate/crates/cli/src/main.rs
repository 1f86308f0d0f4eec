//! `luti`: train classifiers, register point clouds, benchmark embeddings and
//! manage lookup tables.

mod data;
mod learn;
mod pose;
mod table;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use luti_core::bench::{self, BenchConfig};

#[derive(Parser, Debug)]
#[command(name = "luti", version, about = "Lookup-table point embeddings: training, registration and benchmarks")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier and write a checkpoint plus per-epoch metrics
    Train(learn::TrainArgs),
    /// Predict classes for cloud files, or score a dataset's test split
    Classify(learn::ClassifyArgs),
    /// Align a source cloud to a target cloud
    Register(pose::RegisterArgs),
    /// Time embedding and Jacobian computation for both backends
    Bench(BenchArgs),
    /// Tabulate a checkpoint's embedding into a LUT file
    ExportLut(table::ExportArgs),
    /// Print one channel of a LUT on a z slice as CSV
    InspectLut(table::InspectArgs),
    /// Train and score variants over a list of lattice resolutions
    Ablation(learn::AblationArgs),
    /// Write a synthetic dataset as XYZ files
    Synth(learn::SynthArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long = "d", value_delimiter = ',', default_value = "4,8,16")]
    ds: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    k: usize,
    /// Hidden widths of the benchmarked MLP
    #[arg(long, value_delimiter = ',', default_value = "64,64,64,128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    repeats: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write timings as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write speedup ratios as CSV
    #[arg(long)]
    speedups_csv: Option<PathBuf>,
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        points: a.points,
        ds: a.ds.clone(),
        k: a.k,
        hidden: a.hidden.clone(),
        repeats: a.repeats,
        warmup: a.warmup,
        seed: a.seed,
        ..Default::default()
    };
    let report = bench::run(&cfg)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.speedups_csv {
        std::fs::write(p, report.speedups_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// Exit status 1 for problems with the input, 2 for failures inside the
/// computation.
fn exit_code(err: &anyhow::Error) -> u8 {
    use luti_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Singular | E::NonFinite(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    1
}

fn one_line(err: &anyhow::Error) -> String {
    let mut s = String::new();
    for (i, cause) in err.chain().enumerate() {
        let msg = cause.to_string();
        // anyhow contexts often repeat the path already carried by the cause
        if i > 0 && s.contains(&msg) {
            continue;
        }
        if i > 0 {
            s.push_str(": ");
        }
        let _ = write!(s, "{}", msg.replace('\n', " "));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.cmd {
        Command::Train(a) => learn::cmd_train(a),
        Command::Classify(a) => learn::cmd_classify(a),
        Command::Register(a) => pose::cmd_register(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ExportLut(a) => table::cmd_export(a),
        Command::InspectLut(a) => table::cmd_inspect(a),
        Command::Ablation(a) => learn::cmd_ablation(a),
        Command::Synth(a) => learn::cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("luti: {}", line.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| info.payload().downcast_ref::<String>().cloned())
            .unwrap_or_default();
        eprintln!("luti: internal error: {}", msg.replace('\n', " "));
    }));
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("luti: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
