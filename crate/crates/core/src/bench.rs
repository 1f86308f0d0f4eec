//! Wall-clock timing of embedding and Jacobian computation for the MLP and
//! tabulated backends.

use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::PointCloud;
use crate::embed::{global_feature, Embedder};
use crate::error::{Error, Result};
use crate::lattice::{Lattice3, Lut};
use crate::mlp::{tabulate, Activation, Mlp};
use crate::registration::{approx_jacobian, canonical_jacobian};

/// Summary of repeated wall-clock measurements, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub repeats: usize,
}

impl Timing {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("timing samples"));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Ok(Self {
            median,
            mean: s.iter().sum::<f64>() / n as f64,
            min: s[0],
            max: s[n - 1],
            repeats: n,
        })
    }
}

/// Runs `f` `warmup` times untimed, then `repeats` timed runs.
pub fn time_fn<T>(warmup: usize, repeats: usize, mut f: impl FnMut() -> T) -> Result<Timing> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    for _ in 0..warmup {
        black_box(f());
    }
    let samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed().as_secs_f64()
        })
        .collect();
    Timing::from_samples(&samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MlpForward,
    LutiForward,
    ApproxJacobianMlp,
    ApproxJacobianLuti,
    CanonicalJacobianMlp,
    CanonicalJacobianLuti,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::MlpForward,
        Method::LutiForward,
        Method::ApproxJacobianMlp,
        Method::ApproxJacobianLuti,
        Method::CanonicalJacobianMlp,
        Method::CanonicalJacobianLuti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MlpForward => "mlp_forward",
            Method::LutiForward => "luti_forward",
            Method::ApproxJacobianMlp => "approx_jacobian_mlp",
            Method::ApproxJacobianLuti => "approx_jacobian_luti",
            Method::CanonicalJacobianMlp => "canonical_jacobian_mlp",
            Method::CanonicalJacobianLuti => "canonical_jacobian_luti",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Points per cloud.
    pub points: usize,
    pub ds: Vec<usize>,
    pub k: usize,
    /// Hidden widths of the embedding MLP (input 3 and output `k` implied).
    pub hidden: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    /// Perturbation of the finite-difference Jacobian.
    pub t: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            points: 1000,
            ds: vec![4, 8, 16],
            k: 1024,
            hidden: vec![64, 64, 64, 128],
            repeats: 30,
            warmup: 3,
            t: 1e-2,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.k == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument("points, k and repeats must be positive".into()));
        }
        if self.ds.is_empty() || self.ds.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument("every D must be at least 2".into()));
        }
        if !(self.t > 0.0) {
            return Err(Error::InvalidArgument("t must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub d: usize,
    pub points: usize,
    pub k: usize,
    pub timing: Timing,
}

/// `baseline / candidate` medians for one D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub d: usize,
    pub baseline: Method,
    pub candidate: Method,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

const PAIRS: [(Method, Method); 3] = [
    (Method::MlpForward, Method::LutiForward),
    (Method::ApproxJacobianMlp, Method::ApproxJacobianLuti),
    (Method::CanonicalJacobianMlp, Method::CanonicalJacobianLuti),
];

impl BenchReport {
    pub fn get(&self, method: Method, d: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.d == d)
    }

    pub fn speedups(&self) -> Vec<Speedup> {
        let mut ds: Vec<usize> = self.rows.iter().map(|r| r.d).collect();
        ds.dedup();
        let mut out = Vec::new();
        for d in ds {
            for (b, c) in PAIRS {
                if let (Some(rb), Some(rc)) = (self.get(b, d), self.get(c, d)) {
                    out.push(Speedup {
                        d,
                        baseline: b,
                        candidate: c,
                        ratio: rb.timing.median / rc.timing.median,
                    });
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,d,points,k,repeats,median_s,mean_s,min_s,max_s\n");
        for r in &self.rows {
            let t = &r.timing;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:e},{:e},{:e},{:e}",
                r.method, r.d, r.points, r.k, t.repeats, t.median, t.mean, t.min, t.max
            );
        }
        s
    }

    pub fn speedups_csv(&self) -> String {
        let mut s = String::from("d,baseline,candidate,speedup\n");
        for sp in self.speedups() {
            let _ = writeln!(s, "{},{},{},{:.3}", sp.d, sp.baseline, sp.candidate, sp.ratio);
        }
        s
    }

    /// Aligned table of medians and means in milliseconds, then speedups.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<26} {:>4} {:>7} {:>6} {:>12} {:>12}\n",
            "method", "D", "points", "K", "median_ms", "mean_ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<26} {:>4} {:>7} {:>6} {:>12.4} {:>12.4}",
                r.method.name(),
                r.d,
                r.points,
                r.k,
                r.timing.median * 1e3,
                r.timing.mean * 1e3
            );
        }
        s.push('\n');
        for sp in self.speedups() {
            let _ = writeln!(s, "D={:<4} {:<24} / {:<24} {:>10.2}x", sp.d, sp.baseline.name(), sp.candidate.name(), sp.ratio);
        }
        s
    }
}

/// A random cloud in the unit cube.
pub fn random_cloud(n: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect())
}

/// He-initialized embedding MLP `3 → hidden… → k` with ReLU throughout.
pub fn embedding_mlp(hidden: &[usize], k: usize, seed: u64) -> Result<Mlp> {
    let mut dims = vec![3];
    dims.extend_from_slice(hidden);
    dims.push(k);
    Mlp::he_uniform(&dims, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn time_method<E: Embedder>(e: &E, method: Method, cloud: &PointCloud, cfg: &BenchConfig) -> Result<Timing> {
    let mut err = None;
    let mut run = |r: Result<()>| {
        if let Err(x) = r {
            err.get_or_insert(x);
        }
    };
    let timing = match method {
        Method::MlpForward | Method::LutiForward => time_fn(cfg.warmup, cfg.repeats, || run(global_feature(e, cloud.points()).map(drop)))?,
        Method::ApproxJacobianMlp | Method::ApproxJacobianLuti => {
            time_fn(cfg.warmup, cfg.repeats, || run(approx_jacobian(e, cloud, cfg.t).map(drop)))?
        }
        Method::CanonicalJacobianMlp | Method::CanonicalJacobianLuti => time_fn(cfg.warmup, cfg.repeats, || {
            run(global_feature(e, cloud.points()).and_then(|a| canonical_jacobian(e, cloud, &a)).map(drop))
        })?,
    };
    match err {
        Some(e) => Err(e),
        None => Ok(timing),
    }
}

/// Times `methods` for every D in `cfg.ds`. Every MLP-backed method is
/// re-measured for each D so rows are independent samples.
pub fn run_methods(cfg: &BenchConfig, methods: &[Method]) -> Result<BenchReport> {
    cfg.validate()?;
    let mlp = embedding_mlp(&cfg.hidden, cfg.k, cfg.seed)?;
    let cloud = random_cloud(cfg.points, cfg.seed.wrapping_add(1))?;
    let mut report = BenchReport::default();
    for &d in &cfg.ds {
        let needs_lut = methods.iter().any(|m| m.name().contains("luti"));
        let lut: Option<Lut> = if needs_lut { Some(tabulate(&mlp, &Lattice3::unit(d)?)?) } else { None };
        for &method in methods {
            let timing = match method {
                Method::MlpForward | Method::ApproxJacobianMlp | Method::CanonicalJacobianMlp => time_method(&mlp, method, &cloud, cfg)?,
                _ => time_method(lut.as_ref().expect("table built"), method, &cloud, cfg)?,
            };
            report.rows.push(BenchRow {
                method,
                d,
                points: cfg.points,
                k: cfg.k,
                timing,
            });
        }
    }
    Ok(report)
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    run_methods(cfg, &Method::ALL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let t = Timing::from_samples(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((t.median, t.mean, t.min, t.max), (2.0, 2.0, 1.0, 3.0));
        assert_eq!(Timing::from_samples(&[4.0, 1.0, 2.0, 3.0]).unwrap().median, 2.5);
        assert!(Timing::from_samples(&[]).is_err());
    }

    #[test]
    fn warmup_runs_are_not_timed() {
        let mut calls = 0;
        let t = time_fn(2, 5, || calls += 1).unwrap();
        assert_eq!(calls, 7);
        assert_eq!(t.repeats, 5);
    }

    #[test]
    fn one_row_per_method_and_d() {
        let cfg = BenchConfig {
            points: 50,
            ds: vec![3, 5],
            k: 8,
            hidden: vec![8],
            repeats: 2,
            warmup: 0,
            ..Default::default()
        };
        let r = run(&cfg).unwrap();
        assert_eq!(r.rows.len(), 12);
        for d in [3, 5] {
            for m in Method::ALL {
                assert!(r.get(m, d).is_some());
            }
        }
        assert_eq!(r.speedups().len(), 6);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("method,d,"));
        assert!(r.to_text().contains("canonical_jacobian_luti"));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = BenchConfig {
            ds: vec![1],
            ..Default::default()
        };
        assert!(run(&cfg).is_err());
    }
}
