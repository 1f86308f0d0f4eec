use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::max_aggregate;
use crate::dataio::PointCloud;
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::lattice::{Lattice3, Lut};
use crate::linalg::Matrix;
use crate::mlp::{tabulate, Activation, Mlp};
use crate::Point3;

/// Embedding architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Per-point MLP.
    Mlp,
    /// Trained MLP, tabulated afterwards and read at the nearest node.
    LutMlpApprox,
    /// Trained MLP, tabulated afterwards and interpolated.
    LutiMlpApprox,
    /// MLP trained through nearest-node lookup.
    LutMlpE2e,
    /// MLP trained through trilinear interpolation of its node values.
    LutiMlpE2e,
    /// Table entries trained directly, nearest-node lookup.
    LutDirect,
    /// Table entries trained directly, interpolated.
    LutiDirect,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Mlp,
        Variant::LutMlpApprox,
        Variant::LutiMlpApprox,
        Variant::LutMlpE2e,
        Variant::LutiMlpE2e,
        Variant::LutDirect,
        Variant::LutiDirect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mlp => "mlp",
            Variant::LutMlpApprox => "lut_mlp_approx",
            Variant::LutiMlpApprox => "luti_mlp_approx",
            Variant::LutMlpE2e => "lut_mlp_e2e",
            Variant::LutiMlpE2e => "luti_mlp_e2e",
            Variant::LutDirect => "lut_direct",
            Variant::LutiDirect => "luti_direct",
        }
    }

    /// Whether the embedding is a table read through the lattice at train time.
    pub fn trains_through_lattice(self) -> bool {
        matches!(self, Variant::LutMlpE2e | Variant::LutiMlpE2e | Variant::LutDirect | Variant::LutiDirect)
    }

    /// Whether test-time lookups interpolate (as opposed to nearest node).
    pub fn interpolates(self) -> bool {
        matches!(self, Variant::LutiMlpApprox | Variant::LutiMlpE2e | Variant::LutiDirect)
    }

    pub fn is_direct(self) -> bool {
        matches!(self, Variant::LutDirect | Variant::LutiDirect)
    }

    pub fn is_approx(self) -> bool {
        matches!(self, Variant::LutMlpApprox | Variant::LutiMlpApprox)
    }

    /// Whether inference reads a lookup table.
    pub fn uses_table(self) -> bool {
        self != Variant::Mlp
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::InvalidArgument(format!("unknown variant '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Lattice resolution per axis.
    pub d: usize,
    /// Embedding width.
    pub k: usize,
    /// Hidden widths of the embedding MLP (`3 → hidden… → K`).
    pub embed_hidden: Vec<usize>,
    /// Hidden width of the classifier head (`K → H → C`).
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Weight λ of the TV term (direct variants only).
    pub tv_weight: f64,
    pub tv_p: u32,
    pub seed: u64,
    /// Random up-axis rotation and jitter on training samples.
    pub augment: bool,
    /// Round table values through `f32` on the training path, matching the
    /// stored table. Disable only for gradient checks.
    pub round_f32: bool,
    /// Batch normalization on hidden embedding layers (`mlp` and approx
    /// variants only).
    pub batch_norm: bool,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::LutiMlpE2e,
            d: 8,
            k: 128,
            embed_hidden: vec![64, 64],
            head_hidden: 64,
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 20,
            tv_weight: 0.0,
            tv_p: 2,
            seed: 0,
            augment: true,
            round_f32: true,
            batch_norm: false,
            lo: [-1.0; 3],
            hi: [1.0; 3],
        }
    }
}

impl TrainConfig {
    pub fn lattice(&self) -> Result<Lattice3> {
        Lattice3::new(self.d, self.lo, self.hi)
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 || self.head_hidden == 0 || self.embed_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be finite and ≥ 0, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return bad("learning-rate decay must be positive".into());
        }
        if !(self.tv_weight >= 0.0) || !self.tv_weight.is_finite() {
            return bad(format!("TV weight must be ≥ 0, got {}", self.tv_weight));
        }
        if self.tv_p != 1 && self.tv_p != 2 {
            return bad(format!("TV exponent must be 1 or 2, got {}", self.tv_p));
        }
        if self.batch_norm && self.variant.trains_through_lattice() {
            return bad(format!("batch normalization is not supported for {}", self.variant));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// `K → H → C` classifier on the global feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub mlp: Mlp,
}

impl ClassifierHead {
    pub fn new<R: Rng + ?Sized>(k: usize, hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
        }
        Ok(Self {
            mlp: Mlp::he_uniform(&[k, hidden, classes], Activation::None, rng)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        self.mlp.forward(feature)
    }
}

/// Index of the largest score; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Trainable embedding parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingParams {
    Mlp(Mlp),
    /// Raw node table, `D³×K`, in the [`Lut`] layout.
    Table { k: usize, data: Vec<f64> },
}

/// A classifier: embedding, channel-wise max, head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub variant: Variant,
    pub lattice: Lattice3,
    pub embedding: EmbeddingParams,
    pub head: ClassifierHead,
}

impl Model {
    /// Fresh model for `cfg` with `classes` outputs, initialized from `cfg.seed`.
    pub fn init(cfg: &TrainConfig, classes: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lattice = cfg.lattice()?;
        let embedding = if cfg.variant.is_direct() {
            let n = lattice.node_count() * cfg.k;
            EmbeddingParams::Table {
                k: cfg.k,
                data: (0..n).map(|_| rng.gen_range(0.0..0.01)).collect(),
            }
        } else {
            let mut dims = vec![3];
            dims.extend(&cfg.embed_hidden);
            dims.push(cfg.k);
            let mut mlp = Mlp::he_uniform(&dims, Activation::Relu, &mut rng)?;
            if cfg.batch_norm {
                mlp.enable_batch_norm();
            }
            EmbeddingParams::Mlp(mlp)
        };
        let head = ClassifierHead::new(cfg.k, cfg.head_hidden, classes, &mut rng)?;
        Ok(Self {
            variant: cfg.variant,
            lattice,
            embedding,
            head,
        })
    }

    pub fn k(&self) -> usize {
        match &self.embedding {
            EmbeddingParams::Mlp(m) => m.out_dim(),
            EmbeddingParams::Table { k, .. } => *k,
        }
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn embedding_mlp(&self) -> Option<&Mlp> {
        match &self.embedding {
            EmbeddingParams::Mlp(m) => Some(m),
            EmbeddingParams::Table { .. } => None,
        }
    }

    /// Same parameters read through another variant, e.g. a trained `mlp`
    /// model evaluated as `luti_mlp_approx` on a lattice of resolution `d`.
    pub fn as_variant(&self, variant: Variant, lattice: Lattice3) -> Result<Model> {
        let ok = match &self.embedding {
            EmbeddingParams::Mlp(_) => !variant.is_direct(),
            EmbeddingParams::Table { .. } => variant.is_direct() && lattice == self.lattice,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("cannot read a {} model as {variant}", self.variant)));
        }
        Ok(Model {
            variant,
            lattice,
            ..self.clone()
        })
    }

    /// Table the model reads at test time: the tabulated MLP or the raw
    /// table rounded to `f32`.
    pub fn to_lut(&self) -> Result<Lut> {
        match &self.embedding {
            EmbeddingParams::Mlp(m) => tabulate(m, &self.lattice),
            EmbeddingParams::Table { k, data } => Lut::new(self.lattice, *k, data.iter().map(|&v| v as f32).collect()),
        }
    }

    /// Test-time embedding backend.
    pub fn backend(&self) -> Result<Backend> {
        Ok(match self.variant {
            Variant::Mlp => Backend::Mlp(self.embedding_mlp().expect("mlp variant holds an MLP").clone()),
            v if v.interpolates() => Backend::Interp(self.to_lut()?),
            _ => Backend::Nearest(self.to_lut()?),
        })
    }

    /// Every trainable tensor, embedding first, then head.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = match &mut self.embedding {
            EmbeddingParams::Mlp(m) => m.tensors_mut(),
            EmbeddingParams::Table { data, .. } => vec![&mut data[..]],
        };
        out.extend(self.head.mlp.tensors_mut());
        out
    }
}

/// A frozen model ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Mlp(Mlp),
    Interp(Lut),
    Nearest(Lut),
}

impl Embedder for Backend {
    fn dim(&self) -> usize {
        match self {
            Backend::Mlp(m) => m.out_dim(),
            Backend::Interp(l) | Backend::Nearest(l) => l.k(),
        }
    }

    fn embed_points(&self, points: &[Point3]) -> Result<Matrix> {
        match self {
            Backend::Mlp(m) => m.embed_points(points),
            Backend::Interp(l) => l.embed_points(points),
            Backend::Nearest(l) => {
                let k = l.k();
                let mut out = Matrix::zeros(points.len(), k);
                for (p, row) in points.iter().zip(out.as_mut_slice().chunks_mut(k.max(1))) {
                    let node = l.lattice().nearest(*p)?;
                    for (o, v) in row.iter_mut().zip(l.node(node)) {
                        *o = *v as f64;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Nearest-node lookup is piecewise constant, so its gradient is zero.
    fn channel_gradient(&self, p: Point3, channel: usize) -> Result<[f64; 3]> {
        match self {
            Backend::Mlp(m) => Embedder::channel_gradient(m, p, channel),
            Backend::Interp(l) => Embedder::channel_gradient(l, p, channel),
            Backend::Nearest(l) => {
                if channel >= l.k() {
                    return Err(Error::InvalidArgument(format!("channel {channel} out of range (K = {})", l.k())));
                }
                l.lattice().nearest(p)?;
                Ok([0.0; 3])
            }
        }
    }
}

/// Frozen embedding backend plus classifier head.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub backend: Backend,
    pub head: ClassifierHead,
}

impl Classifier {
    pub fn from_model(model: &Model) -> Result<Self> {
        Ok(Self {
            backend: model.backend()?,
            head: model.head.clone(),
        })
    }

    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let a = max_aggregate(&self.backend.embed_points(cloud.points())?)?;
        Ok(self.head.logits(&a.values))
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        Ok(argmax(&self.logits(cloud)?))
    }
}
