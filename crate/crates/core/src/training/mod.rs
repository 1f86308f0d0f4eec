//! Classifier training for every embedding variant.

mod adam;
mod augment;
mod model;
mod step;
mod tv;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::PointCloud;
use crate::error::{Error, Result};

pub use adam::Adam;
pub use augment::{augment, augment_with, JITTER_SIGMA};
pub use model::{argmax, Backend, ClassifierHead, Classifier, EmbeddingParams, Model, TrainConfig, Variant};
pub use step::{loss_and_grad, training_path_embeddings, BatchEval};
pub use tv::{tv_regularizer, tv_values};

/// Running-statistics momentum for batch-normalized layers.
const BN_MOMENTUM: f64 = 0.1;

/// Metrics of one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Accuracy on the (augmented) training batches as they were seen.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// A trained model with the configuration and class names it was trained
/// with, stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    pub model: Model,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::dataio::save_json(path, self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck: Checkpoint = crate::dataio::load_json(path)?;
        if !ck.class_names.is_empty() && ck.class_names.len() != ck.model.classes() {
            return Err(Error::Format(format!(
                "checkpoint names {} classes but the head has {}",
                ck.class_names.len(),
                ck.model.classes()
            )));
        }
        ck.model.backend()?;
        Ok(ck)
    }
}

/// Model plus optimizer state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    adam: Adam,
    epoch: usize,
}

/// Derives an independent stream seed from a base seed and two counters.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Trainer {
    pub fn new(cfg: TrainConfig, classes: usize) -> Result<Self> {
        let model = Model::init(&cfg, classes)?;
        Ok(Self::from_model(cfg, model))
    }

    /// Continues from existing parameters, e.g. an MLP checkpoint used to
    /// initialize an end-to-end variant.
    pub fn from_model(cfg: TrainConfig, model: Model) -> Self {
        Self {
            cfg,
            model,
            adam: Adam::default(),
            epoch: 0,
        }
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on `batch` at the current epoch's learning rate.
    /// Returns the loss before the update.
    pub fn train_step(&mut self, batch: &[PointCloud]) -> Result<f64> {
        Ok(self.step_eval(batch)?.loss)
    }

    fn step_eval(&mut self, batch: &[PointCloud]) -> Result<BatchEval> {
        let eval = loss_and_grad(&self.model, batch, &self.cfg)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {} at epoch {}, step {}",
                eval.loss,
                self.epoch + 1,
                self.adam.steps() + 1
            )));
        }
        let lr = self.cfg.lr_at(self.epoch);
        self.adam.update(lr, self.model.tensors_mut(), &eval.grads)?;
        if let model::EmbeddingParams::Mlp(mlp) = &mut self.model.embedding {
            for (layer, stats) in mlp.layers_mut().iter_mut().zip(&eval.bn_stats) {
                if let (Some(bn), Some((mean, var))) = (&mut layer.batch_norm, stats) {
                    for c in 0..mean.len() {
                        bn.mean[c] = (1.0 - BN_MOMENTUM) * bn.mean[c] + BN_MOMENTUM * mean[c];
                        bn.var[c] = (1.0 - BN_MOMENTUM) * bn.var[c] + BN_MOMENTUM * var[c];
                    }
                }
            }
        }
        Ok(eval)
    }

    /// One pass over `data` in a seeded random order, with augmentation when
    /// enabled. Results depend only on the seed, not on thread count.
    pub fn train_epoch(&mut self, data: &[PointCloud]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let e = self.epoch as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, e, u64::MAX)));
        let lattice = self.model.lattice;
        let samples: Vec<PointCloud> = order
            .par_iter()
            .map(|&i| {
                if self.cfg.augment {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, e, i as u64));
                    augment(&data[i], &lattice, &mut rng)
                } else {
                    data[i].map_points(|p| lattice.clamp(p))
                }
            })
            .collect();
        let lr = self.cfg.lr_at(self.epoch);
        let (mut loss, mut correct) = (0.0, 0);
        for batch in samples.chunks(self.cfg.batch_size) {
            let ev = self.step_eval(batch)?;
            loss += ev.loss * batch.len() as f64;
            correct += ev.correct;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            lr,
            loss: loss / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
            test_acc: None,
        })
    }
}

/// Trains a fresh model for `cfg.epochs` epochs. `on_epoch` sees every
/// epoch's metrics, including test accuracy when a test set is given.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[PointCloud],
    test_set: Option<&[PointCloud]>,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, Vec<EpochStats>)> {
    let classes = train_set
        .iter()
        .map(|c| c.label().ok_or_else(|| Error::InvalidArgument("unlabeled training sample".into())))
        .try_fold(0, |m, l| l.map(|l| m.max(l + 1)))?;
    train_from(cfg, Model::init(cfg, classes.max(2))?, train_set, test_set, on_epoch)
}

/// Like [`train`], starting from `model` instead of a fresh initialization.
pub fn train_from(
    cfg: &TrainConfig,
    model: Model,
    train_set: &[PointCloud],
    test_set: Option<&[PointCloud]>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, Vec<EpochStats>)> {
    cfg.validate()?;
    if model.variant != cfg.variant || model.k() != cfg.k {
        return Err(Error::InvalidArgument(format!(
            "initial model is {} with K = {}, config asks for {} with K = {}",
            model.variant,
            model.k(),
            cfg.variant,
            cfg.k
        )));
    }
    let mut trainer = Trainer::from_model(cfg.clone(), model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut stats = trainer.train_epoch(train_set)?;
        if let Some(t) = test_set {
            stats.test_acc = Some(evaluate(&trainer.model, t)?);
        }
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((trainer.model, history))
}

/// Fraction of labeled samples whose predicted class is correct.
pub fn evaluate(model: &Model, dataset: &[PointCloud]) -> Result<f64> {
    evaluate_classifier(&Classifier::from_model(model)?, dataset)
}

pub fn evaluate_classifier(classifier: &Classifier, dataset: &[PointCloud]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let hits = dataset
        .par_iter()
        .map(|c| {
            let y = c.label().ok_or_else(|| Error::InvalidArgument("unlabeled evaluation sample".into()))?;
            Ok(usize::from(classifier.predict(c)? == y))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_dataset, Shape};
    use crate::embed::Embedder;
    use crate::mlp::tabulate;

    fn small_cfg(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            d: 4,
            k: 8,
            embed_hidden: vec![8],
            head_hidden: 8,
            epochs: 1,
            batch_size: 4,
            augment: false,
            ..Default::default()
        }
    }

    fn data() -> Vec<PointCloud> {
        synth_dataset(&[Shape::Sphere, Shape::Cube], 4, 32, 5).unwrap()
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("lut".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d = data();
        for v in Variant::ALL {
            let cfg = TrainConfig {
                lr: 0.0,
                tv_weight: if v.is_direct() { 1.0 } else { 0.0 },
                ..small_cfg(v)
            };
            let mut t = Trainer::new(cfg, 2).unwrap();
            let before = t.model.clone();
            let loss = t.train_step(&d[..4]).unwrap();
            assert!(loss.is_finite() && loss > 0.0);
            assert_eq!(t.model, before, "{v}");
        }
    }

    #[test]
    fn single_sample_overfits() {
        let d = data();
        for v in [Variant::Mlp, Variant::LutiMlpE2e, Variant::LutMlpE2e, Variant::LutiDirect] {
            let cfg = TrainConfig {
                lr: 1e-2,
                ..small_cfg(v)
            };
            let mut t = Trainer::new(cfg, 2).unwrap();
            let one = &d[..1];
            for _ in 0..200 {
                t.train_step(one).unwrap();
            }
            let last = loss_and_grad(&t.model, one, &t.cfg).unwrap().cross_entropy;
            assert!(last < 0.01, "{v}: {last}");
        }
    }

    fn flat_params(m: &mut Model) -> Vec<f64> {
        m.tensors_mut().iter().flat_map(|t| t.iter().copied()).collect()
    }

    fn set_param(m: &mut Model, mut idx: usize, v: f64) {
        for t in m.tensors_mut() {
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
        unreachable!()
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            variant: Variant::LutiMlpE2e,
            d: 3,
            k: 4,
            embed_hidden: vec![5],
            head_hidden: 4,
            round_f32: false,
            ..Default::default()
        };
        let d = synth_dataset(&[Shape::Sphere, Shape::Torus], 2, 20, 2).unwrap();
        let mut model = Model::init(&cfg, 2).unwrap();
        // D = 3 has a node at the origin, where zero biases would put every
        // first-layer pre-activation exactly on the ReLU kink
        if let EmbeddingParams::Mlp(mlp) = &mut model.embedding {
            for (l, layer) in mlp.layers_mut().iter_mut().enumerate() {
                for (c, b) in layer.bias.0.iter_mut().enumerate() {
                    *b = 0.05 * ((l * 7 + c * 3) % 5) as f64 - 0.09;
                }
            }
        }
        let ev = loss_and_grad(&model, &d, &cfg).unwrap();
        let analytic: Vec<f64> = ev.grads.iter().flatten().copied().collect();
        let params = flat_params(&mut model);
        assert_eq!(params.len(), analytic.len());
        let h = 1e-6;
        let mut checked = 0;
        for i in 0..params.len() {
            let mut up = model.clone();
            set_param(&mut up, i, params[i] + h);
            let mut dn = model.clone();
            set_param(&mut dn, i, params[i] - h);
            let fd = (loss_and_grad(&up, &d, &cfg).unwrap().loss - loss_and_grad(&dn, &d, &cfg).unwrap().loss) / (2.0 * h);
            let a = analytic[i];
            let scale = a.abs().max(fd.abs());
            if scale < 1e-7 {
                continue;
            }
            assert!((a - fd).abs() <= 1e-4 * scale, "param {i}: analytic {a} vs fd {fd}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn direct_gradient_only_on_looked_up_nodes() {
        let cfg = small_cfg(Variant::LutDirect);
        let d = data();
        let model = Model::init(&cfg, 2).unwrap();
        let ev = loss_and_grad(&model, &d[..2], &cfg).unwrap();
        let k = cfg.k;
        let mut looked_up = std::collections::HashSet::new();
        for c in &d[..2] {
            for p in c.points() {
                looked_up.insert(model.lattice.nearest(*p).unwrap());
            }
        }
        let table_grad = &ev.grads[0];
        let mut nonzero = 0;
        for (n, g) in table_grad.chunks(k).enumerate() {
            if g.iter().any(|v| *v != 0.0) {
                assert!(looked_up.contains(&n), "node {n} was not looked up");
                nonzero += 1;
            }
        }
        assert!(nonzero > 0);
    }

    #[test]
    fn training_path_matches_tabulated_table() {
        let cfg = TrainConfig {
            epochs: 2,
            ..small_cfg(Variant::LutiMlpE2e)
        };
        let d = data();
        let (model, _) = train(&cfg, &d, None, |_| {}).unwrap();
        let pts: Vec<crate::Point3> = d.iter().flat_map(|c| c.points().iter().copied()).collect();
        let a = training_path_embeddings(&model, &pts, true).unwrap();
        let lut = tabulate(model.embedding_mlp().unwrap(), &model.lattice).unwrap();
        let b = lut.embed_points(&pts).unwrap();
        let bits = |m: &crate::linalg::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn evaluate_edge_cases() {
        let cfg = small_cfg(Variant::Mlp);
        let mut model = Model::init(&cfg, 2).unwrap();
        // zero last layer, bias towards class 0
        let last = model.head.mlp.layers_mut().last_mut().unwrap();
        last.weight.as_mut_slice().fill(0.0);
        last.bias.0 = vec![1.0, 0.0];
        let zeros: Vec<PointCloud> = data().into_iter().map(|c| c.with_label(Some(0))).collect();
        assert_eq!(evaluate(&model, &zeros).unwrap(), 1.0);
        assert!(evaluate(&model, &[]).is_err());
    }

    #[test]
    fn deterministic_training() {
        let cfg = TrainConfig {
            epochs: 2,
            augment: true,
            ..small_cfg(Variant::LutiMlpE2e)
        };
        let d = data();
        let (m1, h1) = train(&cfg, &d, Some(&d), |_| {}).unwrap();
        let (m2, h2) = train(&cfg, &d, Some(&d), |_| {}).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(Variant::LutiMlpE2e);
        cfg.batch_norm = true;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            d: 1,
            ..small_cfg(Variant::Mlp)
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            tv_p: 3,
            ..small_cfg(Variant::LutDirect)
        };
        assert!(cfg.validate().is_err());
        assert!(Model::init(&small_cfg(Variant::Mlp), 1).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let cfg = TrainConfig {
            epochs: 1,
            ..small_cfg(Variant::LutiMlpE2e)
        };
        let (model, _) = train(&cfg, &data(), None, |_| {}).unwrap();
        let ck = Checkpoint {
            config: cfg,
            class_names: vec!["sphere".into(), "cube".into()],
            model,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        std::fs::write(&path, "{").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(19), 1e-3);
        assert_eq!(cfg.lr_at(20), 5e-4);
        assert_eq!(cfg.lr_at(45), 2.5e-4);
    }

    #[test]
    fn batch_norm_mlp_trains_and_folds() {
        let cfg = TrainConfig {
            batch_norm: true,
            epochs: 2,
            ..small_cfg(Variant::Mlp)
        };
        let d = data();
        let (model, _) = train(&cfg, &d, None, |_| {}).unwrap();
        let mlp = model.embedding_mlp().unwrap();
        assert!(mlp.has_batch_norm());
        let approx = model.as_variant(Variant::LutiMlpApprox, model.lattice).unwrap();
        let acc = evaluate(&approx, &d).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
