//! Channel-wise max pooling over a point set.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Max-pooled feature of a point set together with the point that produced
/// each channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeature {
    pub values: Vec<f64>,
    /// Index of the contributing point for each channel.
    pub argmax: Vec<usize>,
}

impl GlobalFeature {
    pub fn k(&self) -> usize {
        self.values.len()
    }
}

/// Per-channel maximum of an `N×K` embedding matrix. Ties go to the smallest
/// point index.
pub fn max_aggregate(embeddings: &Matrix) -> Result<GlobalFeature> {
    if embeddings.rows() == 0 {
        return Err(Error::Empty("point set"));
    }
    let mut values = embeddings.row(0).to_vec();
    let mut argmax = vec![0usize; values.len()];
    for i in 1..embeddings.rows() {
        for (k, &v) in embeddings.row(i).iter().enumerate() {
            if v > values[k] {
                values[k] = v;
                argmax[k] = i;
            }
        }
    }
    Ok(GlobalFeature { values, argmax })
}

/// Combines two partial reductions over disjoint index ranges, keeping the
/// smaller index on equal values.
pub fn merge(a: &mut GlobalFeature, b: &GlobalFeature) {
    for k in 0..a.values.len() {
        let (va, vb) = (a.values[k], b.values[k]);
        if vb > va || (vb == va && b.argmax[k] < a.argmax[k]) {
            a.values[k] = vb;
            a.argmax[k] = b.argmax[k];
        }
    }
}
