//! Forward and backward passes of a whole classifier over one batch.

use rayon::prelude::*;

use super::model::{argmax, EmbeddingParams, Model, TrainConfig};
use super::tv::tv_values;
use crate::dataio::PointCloud;
use crate::error::{Error, Result};
use crate::lattice::{blend, CellQuery, Lattice3};
use crate::linalg::Matrix;
use crate::mlp::{ForwardCache, Mlp, MlpGrads};

const UNTOUCHED: u32 = u32::MAX;

/// Result of one forward/backward pass.
#[derive(Clone, Debug)]
pub struct BatchEval {
    /// Mean cross-entropy plus the TV term.
    pub loss: f64,
    pub cross_entropy: f64,
    pub tv: f64,
    /// Samples whose highest logit is the true class.
    pub correct: usize,
    /// Gradients in the order of [`Model::tensors_mut`].
    pub grads: Vec<Vec<f64>>,
    /// Batch statistics of batch-normalized embedding layers.
    pub(crate) bn_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

fn labels(batch: &[PointCloud], classes: usize) -> Result<Vec<usize>> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, c)| match c.label() {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(Error::InvalidArgument(format!("sample {i} has label {l} but the head has {classes} classes"))),
            None => Err(Error::InvalidArgument(format!("sample {i} has no label"))),
        })
        .collect()
}

/// Channel-wise max over rows `range` of `emb`; ties go to the first row.
fn max_rows(emb: &Matrix, range: std::ops::Range<usize>) -> (Vec<f64>, Vec<usize>) {
    let k = emb.cols();
    let mut values = emb.row(range.start).to_vec();
    let mut arg = vec![range.start; k];
    for r in range.start + 1..range.end {
        for (c, &v) in emb.row(r).iter().enumerate() {
            if v > values[c] {
                values[c] = v;
                arg[c] = r;
            }
        }
    }
    (values, arg)
}

/// Mean softmax cross-entropy of `logits` (B×C) and its gradient.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix, usize) {
    let b = logits.rows();
    let mut grad = Matrix::zeros(b, logits.cols());
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        loss += m + sum.ln() - z[y];
        if argmax(z) == y {
            correct += 1;
        }
        for (g, v) in grad.row_mut(i).iter_mut().zip(z) {
            *g = (v - m).exp() / sum / b as f64;
        }
        grad[(i, y)] -= 1.0 / b as f64;
    }
    (loss / b as f64, grad, correct)
}

/// Head forward/backward on the stacked global features.
fn head_pass(model: &Model, feats: &Matrix, labels: &[usize]) -> (f64, usize, MlpGrads, Matrix) {
    let head = &model.head.mlp;
    let cache = head.forward_cached(feats, false);
    let (ce, dlogits, correct) = cross_entropy(cache.output(), labels);
    let mut hg = MlpGrads::zeros_like(head);
    let dfeat = head.backward(&cache, &dlogits, &mut hg);
    (ce, correct, hg, dfeat)
}

fn flatten(g: MlpGrads) -> Vec<Vec<f64>> {
    g.tensors().into_iter().map(|t| t.to_vec()).collect()
}

/// Lookups of every point of every cloud on the lattice.
enum Lookup {
    Interp(Vec<Vec<CellQuery>>),
    Nearest(Vec<Vec<usize>>),
}

impl Lookup {
    fn build(lattice: &Lattice3, batch: &[PointCloud], interpolate: bool) -> Result<Self> {
        Ok(if interpolate {
            Lookup::Interp(
                batch
                    .par_iter()
                    .map(|c| c.points().iter().map(|p| lattice.locate(*p)).collect())
                    .collect::<Result<_>>()?,
            )
        } else {
            Lookup::Nearest(
                batch
                    .par_iter()
                    .map(|c| c.points().iter().map(|p| lattice.nearest(*p)).collect())
                    .collect::<Result<_>>()?,
            )
        })
    }

    /// Sorted list of touched nodes and the node → row map.
    fn touched(&self, node_count: usize) -> (Vec<usize>, Vec<u32>) {
        let mut mark = vec![false; node_count];
        match self {
            Lookup::Interp(qs) => qs.iter().flatten().flat_map(|q| q.corners).for_each(|n| mark[n] = true),
            Lookup::Nearest(ns) => ns.iter().flatten().for_each(|&n| mark[n] = true),
        }
        let nodes: Vec<usize> = (0..node_count).filter(|&n| mark[n]).collect();
        let mut map = vec![UNTOUCHED; node_count];
        for (r, &n) in nodes.iter().enumerate() {
            map[n] = r as u32;
        }
        (nodes, map)
    }
}

/// Embeddings of the clouds read from `basis` (one row per touched node).
fn lattice_embeddings(lookup: &Lookup, basis: &Matrix, map: &[u32]) -> Vec<Matrix> {
    let k = basis.cols();
    let row = |n: usize| basis.row(map[n] as usize);
    match lookup {
        Lookup::Interp(qs) => qs
            .par_iter()
            .map(|cq| {
                let mut e = Matrix::zeros(cq.len(), k);
                for (q, out) in cq.iter().zip(e.as_mut_slice().chunks_mut(k)) {
                    blend(q, q.corners.map(row), out);
                }
                e
            })
            .collect(),
        Lookup::Nearest(ns) => ns
            .par_iter()
            .map(|cn| {
                let mut e = Matrix::zeros(cn.len(), k);
                for (&n, out) in cn.iter().zip(e.as_mut_slice().chunks_mut(k)) {
                    out.copy_from_slice(row(n));
                }
                e
            })
            .collect(),
    }
}

fn round_rows(m: &mut Matrix, round: bool) {
    if round {
        m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Node values of the touched nodes as the training path sees them.
fn node_basis(model: &Model, nodes: &[usize], round: bool) -> Result<(Matrix, Option<ForwardCache>)> {
    let k = model.k();
    match &model.embedding {
        EmbeddingParams::Mlp(mlp) => {
            let mut x = Matrix::zeros(nodes.len(), 3);
            for (r, &n) in nodes.iter().enumerate() {
                x.row_mut(r).copy_from_slice(&model.lattice.node_position(n));
            }
            let cache = mlp.forward_cached(&x, false);
            let mut basis = cache.output().clone();
            round_rows(&mut basis, round);
            Ok((basis, Some(cache)))
        }
        EmbeddingParams::Table { data, .. } => {
            let mut basis = Matrix::zeros(nodes.len(), k);
            for (r, &n) in nodes.iter().enumerate() {
                basis.row_mut(r).copy_from_slice(&data[n * k..(n + 1) * k]);
            }
            round_rows(&mut basis, round);
            Ok((basis, None))
        }
    }
}

/// Per-point embeddings of `points` along the training path of `model`:
/// the MLP itself for `mlp` and approx variants, otherwise node values
/// computed on the fly (rounded to `f32` when `round` is set) and read
/// through the lattice.
pub fn training_path_embeddings(model: &Model, points: &[crate::Point3], round: bool) -> Result<Matrix> {
    let cloud = PointCloud::new(points.to_vec())?;
    if !model.variant.trains_through_lattice() {
        let mlp = model.embedding_mlp().expect("MLP-backed variant");
        return Ok(mlp.forward_cached(&cloud.to_matrix(), false).output().clone());
    }
    let batch = [cloud];
    let lookup = Lookup::build(&model.lattice, &batch, model.variant.interpolates())?;
    let (nodes, map) = lookup.touched(model.lattice.node_count());
    let (basis, _) = node_basis(model, &nodes, round)?;
    Ok(lattice_embeddings(&lookup, &basis, &map).pop().expect("one cloud"))
}

/// Loss and gradients of `model` on `batch`, without updating anything.
pub fn loss_and_grad(model: &Model, batch: &[PointCloud], cfg: &TrainConfig) -> Result<BatchEval> {
    let labels = labels(batch, model.classes())?;
    if model.variant.trains_through_lattice() {
        lattice_pass(model, batch, &labels, cfg)
    } else {
        mlp_pass(model, batch, &labels, cfg)
    }
}

fn mlp_pass(model: &Model, batch: &[PointCloud], labels: &[usize], cfg: &TrainConfig) -> Result<BatchEval> {
    let mlp: &Mlp = model.embedding_mlp().ok_or_else(|| Error::InvalidArgument(format!("{} model without an MLP", model.variant)))?;
    let k = mlp.out_dim();
    let total: usize = batch.iter().map(PointCloud::len).sum();
    let mut x = Matrix::zeros(total, 3);
    let mut offsets = Vec::with_capacity(batch.len() + 1);
    let mut off = 0;
    for c in batch {
        offsets.push(off);
        for p in c.points() {
            x.row_mut(off).copy_from_slice(p);
            off += 1;
        }
    }
    offsets.push(off);
    let cache = mlp.forward_cached(&x, cfg.batch_norm);
    let emb = cache.output();
    let mut feats = Matrix::zeros(batch.len(), k);
    let mut args = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let (v, a) = max_rows(emb, offsets[b]..offsets[b + 1]);
        feats.row_mut(b).copy_from_slice(&v);
        args.push(a);
    }
    let (ce, correct, head_grads, dfeat) = head_pass(model, &feats, labels);
    let mut upstream = Matrix::zeros(total, k);
    for (b, a) in args.iter().enumerate() {
        for (c, &r) in a.iter().enumerate() {
            upstream[(r, c)] += dfeat[(b, c)];
        }
    }
    let mut eg = MlpGrads::zeros_like(mlp);
    mlp.backward(&cache, &upstream, &mut eg);
    let mut grads = flatten(eg);
    grads.extend(flatten(head_grads));
    let bn_stats = cache
        .batch_stats()
        .map(|s| s.map(|(m, v)| (m.to_vec(), v.to_vec())))
        .collect();
    Ok(BatchEval {
        loss: ce,
        cross_entropy: ce,
        tv: 0.0,
        correct,
        grads,
        bn_stats,
    })
}

fn lattice_pass(model: &Model, batch: &[PointCloud], labels: &[usize], cfg: &TrainConfig) -> Result<BatchEval> {
    let k = model.k();
    let lattice = &model.lattice;
    let lookup = Lookup::build(lattice, batch, model.variant.interpolates())?;
    let (nodes, map) = lookup.touched(lattice.node_count());
    let (basis, cache) = node_basis(model, &nodes, cfg.round_f32)?;
    let embs = lattice_embeddings(&lookup, &basis, &map);

    let mut feats = Matrix::zeros(batch.len(), k);
    let mut args = Vec::with_capacity(batch.len());
    for (b, e) in embs.iter().enumerate() {
        let (v, a) = max_rows(e, 0..e.rows());
        feats.row_mut(b).copy_from_slice(&v);
        args.push(a);
    }
    let (ce, correct, head_grads, dfeat) = head_pass(model, &feats, labels);

    // gradient with respect to the node values, one row per touched node
    let mut node_grad = Matrix::zeros(nodes.len(), k);
    for (b, a) in args.iter().enumerate() {
        for (c, &i) in a.iter().enumerate() {
            let g = dfeat[(b, c)];
            if g == 0.0 {
                continue;
            }
            match &lookup {
                Lookup::Interp(qs) => {
                    let q = &qs[b][i];
                    for (w, &n) in q.weights.iter().zip(&q.corners) {
                        node_grad[(map[n] as usize, c)] += w * g;
                    }
                }
                Lookup::Nearest(ns) => node_grad[(map[ns[b][i]] as usize, c)] += g,
            }
        }
    }

    let mut tv = 0.0;
    let mut grads = match &model.embedding {
        EmbeddingParams::Mlp(mlp) => {
            let mut eg = MlpGrads::zeros_like(mlp);
            mlp.backward(cache.as_ref().expect("MLP forward cache"), &node_grad, &mut eg);
            flatten(eg)
        }
        EmbeddingParams::Table { data, .. } => {
            let mut g = vec![0.0; data.len()];
            for (r, &n) in nodes.iter().enumerate() {
                g[n * k..(n + 1) * k].copy_from_slice(node_grad.row(r));
            }
            if cfg.tv_weight > 0.0 {
                let mut tg = vec![0.0; data.len()];
                tv = tv_values(lattice, k, data, cfg.tv_p, Some(&mut tg))?;
                for (a, b) in g.iter_mut().zip(&tg) {
                    *a += cfg.tv_weight * b;
                }
            }
            vec![g]
        }
    };
    grads.extend(flatten(head_grads));
    Ok(BatchEval {
        loss: ce + cfg.tv_weight * tv,
        cross_entropy: ce,
        tv,
        correct,
        grads,
        bn_stats: Vec::new(),
    })
}

