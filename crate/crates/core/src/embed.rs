//! A common interface over per-point embedding backends.

use rayon::prelude::*;

use crate::aggregate::{max_aggregate, GlobalFeature};
use crate::error::{Error, Result};
use crate::lattice::Lut;
use crate::linalg::Matrix;
use crate::mlp::Mlp;
use crate::Point3;

/// Rows per rayon task when embedding large clouds.
const PAR_CHUNK: usize = 256;
/// Below this many points embedding runs on the calling thread.
const PAR_MIN: usize = 512;

/// Maps points in R³ to `K`-dimensional feature vectors.
pub trait Embedder: Sync {
    /// Embedding width `K`.
    fn dim(&self) -> usize;

    /// `N×K` embeddings of `points`.
    fn embed_points(&self, points: &[Point3]) -> Result<Matrix>;

    /// Gradient of channel `channel` at `p` with respect to `p`.
    fn channel_gradient(&self, p: Point3, channel: usize) -> Result<[f64; 3]>;
}

/// Channel-wise maximum of the embeddings of `points`.
pub fn global_feature<E: Embedder + ?Sized>(embedder: &E, points: &[Point3]) -> Result<GlobalFeature> {
    if points.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    max_aggregate(&embedder.embed_points(points)?)
}

fn check_channel(channel: usize, k: usize) -> Result<()> {
    if channel >= k {
        return Err(Error::InvalidArgument(format!("channel {channel} out of range (K = {k})")));
    }
    Ok(())
}

impl Embedder for Lut {
    fn dim(&self) -> usize {
        self.k()
    }

    fn embed_points(&self, points: &[Point3]) -> Result<Matrix> {
        let k = self.k();
        let mut out = Matrix::zeros(points.len(), k);
        if k == 0 {
            return Ok(out);
        }
        let fill = |(p, row): (&Point3, &mut [f64])| -> Result<()> {
            let q = self.locate(*p)?;
            self.interpolate_into(&q, row);
            Ok(())
        };
        let data = out.as_mut_slice();
        if points.len() < PAR_MIN {
            points.iter().zip(data.chunks_mut(k)).try_for_each(fill)?;
        } else {
            points
                .par_chunks(PAR_CHUNK)
                .zip(data.par_chunks_mut(PAR_CHUNK * k))
                .try_for_each(|(ps, rows)| ps.iter().zip(rows.chunks_mut(k)).try_for_each(fill))?;
        }
        Ok(out)
    }

    fn channel_gradient(&self, p: Point3, channel: usize) -> Result<[f64; 3]> {
        check_channel(channel, self.k())?;
        let q = self.locate(p)?;
        Ok(Lut::channel_gradient(self, &q, channel))
    }
}

impl Embedder for Mlp {
    fn dim(&self) -> usize {
        self.out_dim()
    }

    fn embed_points(&self, points: &[Point3]) -> Result<Matrix> {
        if self.in_dim() != 3 {
            return Err(Error::DimensionMismatch(format!("embedding MLP takes {} inputs, expected 3", self.in_dim())));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i}")));
        }
        let x = Matrix::from_vec(points.len(), 3, points.iter().flatten().copied().collect())?;
        Ok(self.forward_batch(&x))
    }

    fn channel_gradient(&self, p: Point3, channel: usize) -> Result<[f64; 3]> {
        check_channel(channel, self.out_dim())?;
        if self.in_dim() != 3 {
            return Err(Error::DimensionMismatch(format!("embedding MLP takes {} inputs, expected 3", self.in_dim())));
        }
        Ok(Mlp::channel_gradient(self, p, channel))
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_points(&self, points: &[Point3]) -> Result<Matrix> {
        (**self).embed_points(points)
    }

    fn channel_gradient(&self, p: Point3, channel: usize) -> Result<[f64; 3]> {
        (**self).channel_gradient(p, channel)
    }
}
