use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Point3;

/// A non-empty set of finite 3-D points with an optional class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} of cloud")));
        }
        Ok(Self { points, label: None })
    }

    pub fn labeled(points: Vec<Point3>, label: usize) -> Result<Self> {
        Ok(Self::new(points)?.with_label(Some(label)))
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// Applies `f` to every point. `f` must keep coordinates finite.
    pub fn map_points(&self, mut f: impl FnMut(Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            label: self.label,
        }
    }

    /// Cloud with points reordered as `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<PointCloud> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for cloud of {} points",
                order.len(),
                self.len()
            )));
        }
        let points = order
            .iter()
            .map(|&i| self.points.get(i).copied().ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(PointCloud {
            points,
            label: self.label,
        })
    }

    /// `N×3` matrix of the coordinates.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.points.iter().flatten().copied().collect();
        Matrix::from_vec(self.len(), 3, data).expect("finite N×3 coordinates")
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        let n = self.len() as f64;
        c.map(|v| v / n)
    }

    /// Largest absolute coordinate over all points and axes.
    pub fn max_abs(&self) -> f64 {
        self.points.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Centers the cloud on its centroid and scales it uniformly so that the
/// largest absolute coordinate is 1, fitting it inside `[−1, 1]³`.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    let c = cloud.centroid();
    let centered = cloud.map_points(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
    let m = centered.max_abs();
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Degenerate("all points coincide"));
    }
    Ok(centered.map_points(|p| p.map(|v| v / m)))
}
