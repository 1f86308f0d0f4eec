//! The lookup table: a bounded cubic lattice with `K` basis values per node,
//! queried by trilinear interpolation of the eight surrounding nodes.
//!
//! Corner `j` of a cell is addressed by the bit pattern `(bx, by, bz)` with
//! `j = 4·bx + 2·by + bz`, so corners are visited in the order
//! `000, 001, 010, …, 111`. The weight of a corner is the product over the
//! three axes of `frac` (upper node) or `1 − frac` (lower node), where `frac`
//! is measured from the lower node of the cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Point3;

/// Node grid over an axis-aligned box, `d` nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice3 {
    d: usize,
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Lattice3 {
    pub fn new(d: usize, lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!(
                "lattice needs at least 2 nodes per axis, got {d}"
            )));
        }
        for a in 0..3 {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(Error::InvalidArgument(format!(
                    "lattice bounds on axis {a} must satisfy lo < hi, got [{}, {}]",
                    lo[a], hi[a]
                )));
            }
        }
        Ok(Self { d, lo, hi })
    }

    /// Lattice over `[-1, 1]³`.
    pub fn unit(d: usize) -> Result<Self> {
        Self::new(d, [-1.0; 3], [1.0; 3])
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn lo(&self) -> [f64; 3] {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> [f64; 3] {
        self.hi
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.d * self.d * self.d
    }

    #[inline]
    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.d + iy) * self.d + iz
    }

    #[inline]
    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let d = self.d;
        [flat / (d * d), (flat / d) % d, flat % d]
    }

    /// World coordinates of node `flat`.
    pub fn node_position(&self, flat: usize) -> Point3 {
        let idx = self.unflatten(flat);
        let steps = (self.d - 1) as f64;
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.lo[a] + (self.hi[a] - self.lo[a]) * (idx[a] as f64 / steps);
        }
        p
    }

    /// Cell units per world unit along each axis.
    #[inline]
    pub fn cell_scale(&self) -> [f64; 3] {
        let steps = (self.d - 1) as f64;
        [
            steps / (self.hi[0] - self.lo[0]),
            steps / (self.hi[1] - self.lo[1]),
            steps / (self.hi[2] - self.lo[2]),
        ]
    }

    pub fn clamp(&self, p: Point3) -> Point3 {
        [
            p[0].clamp(self.lo[0], self.hi[0]),
            p[1].clamp(self.lo[1], self.hi[1]),
            p[2].clamp(self.lo[2], self.hi[2]),
        ]
    }

    /// Continuous lattice coordinate of a (clamped) point, in `[0, d-1]³`.
    #[inline]
    fn lattice_coord(&self, p: Point3) -> [f64; 3] {
        let steps = (self.d - 1) as f64;
        let mut u = [0.0; 3];
        for a in 0..3 {
            let c = p[a].clamp(self.lo[a], self.hi[a]);
            u[a] = (c - self.lo[a]) / (self.hi[a] - self.lo[a]) * steps;
        }
        u
    }

    /// Finds the cell containing `p` and its trilinear weights.
    pub fn locate(&self, p: Point3) -> Result<CellQuery> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("query point {p:?}")));
        }
        let u = self.lattice_coord(p);
        let max_cell = self.d - 2;
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let c = (u[a].floor() as usize).min(max_cell);
            cell[a] = c;
            frac[a] = u[a] - c as f64;
            clamped[a] = p[a] < self.lo[a] || p[a] > self.hi[a];
        }
        let wx = [1.0 - frac[0], frac[0]];
        let wy = [1.0 - frac[1], frac[1]];
        let wz = [1.0 - frac[2], frac[2]];
        let base = self.flat_index(cell[0], cell[1], cell[2]);
        let (sx, sy) = (self.d * self.d, self.d);
        let mut weights = [0.0; 8];
        let mut corners = [0usize; 8];
        for j in 0..8 {
            let (bx, by, bz) = (j >> 2, (j >> 1) & 1, j & 1);
            weights[j] = wx[bx] * wy[by] * wz[bz];
            corners[j] = base + bx * sx + by * sy + bz;
        }
        Ok(CellQuery {
            cell,
            frac,
            weights,
            corners,
            clamped,
        })
    }

    /// Flat index of the lattice node closest to `p` (after clamping).
    pub fn nearest(&self, p: Point3) -> Result<usize> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("query point {p:?}")));
        }
        let u = self.lattice_coord(p);
        let top = self.d - 1;
        let i = |a: usize| (u[a].round() as usize).min(top);
        Ok(self.flat_index(i(0), i(1), i(2)))
    }
}

/// Result of [`Lattice3::locate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellQuery {
    /// Lower-corner node indices of the cell, each in `[0, d-2]`.
    pub cell: [usize; 3],
    /// Offsets from the lower corner in cell units, each in `[0, 1]`.
    pub frac: [f64; 3],
    pub weights: [f64; 8],
    /// Flat node index of each corner.
    pub corners: [usize; 8],
    /// Axes along which the query point lay outside the lattice bounds.
    pub clamped: [bool; 3],
}

/// Trilinear blend of the eight corner rows as nested linear
/// interpolations along z, then y, then x. Equal corners give back that
/// value exactly, so a constant table interpolates to a constant.
///
/// Both the tabulated and the on-the-fly (training) paths go through this
/// function, which is what makes them agree bit for bit.
#[inline]
pub fn blend<T: Copy + Into<f64>>(q: &CellQuery, rows: [&[T]; 8], out: &mut [f64]) {
    let [fx, fy, fz] = q.frac;
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    for (ch, o) in out.iter_mut().enumerate() {
        let v = |j: usize| -> f64 { rows[j][ch].into() };
        let c00 = lerp(v(0), v(1), fz);
        let c01 = lerp(v(2), v(3), fz);
        let c10 = lerp(v(4), v(5), fz);
        let c11 = lerp(v(6), v(7), fz);
        let c0 = lerp(c00, c01, fy);
        let c1 = lerp(c10, c11, fy);
        *o = lerp(c0, c1, fx);
    }
}

/// Analytical `K×3` derivative of [`blend`] with respect to world
/// coordinates: a bilinear blend of corner differences per axis.
pub fn blend_jacobian<T: Copy + Into<f64>>(
    q: &CellQuery,
    scale: [f64; 3],
    rows: [&[T]; 8],
    out: &mut Matrix,
) {
    let k = out.rows();
    debug_assert_eq!(out.cols(), 3);
    let pairs = axis_pairs(q);
    let data = out.as_mut_slice();
    for ch in 0..k {
        for axis in 0..3 {
            data[ch * 3 + axis] = if q.clamped[axis] {
                0.0
            } else {
                let mut acc = 0.0;
                for &(lo, hi, w) in &pairs[axis] {
                    acc += (rows[hi][ch].into() - rows[lo][ch].into()) * w;
                }
                acc * scale[axis]
            };
        }
    }
}

/// `(lower, upper)` corner pairs along each axis, with the bilinear weight of
/// the remaining two axes.
#[inline]
fn axis_pairs(q: &CellQuery) -> [[(usize, usize, f64); 4]; 3] {
    let [wx, wy, wz] = axis_weights(q);
    [
        [(0, 4, wy[0] * wz[0]), (1, 5, wy[0] * wz[1]), (2, 6, wy[1] * wz[0]), (3, 7, wy[1] * wz[1])],
        [(0, 2, wx[0] * wz[0]), (1, 3, wx[0] * wz[1]), (4, 6, wx[1] * wz[0]), (5, 7, wx[1] * wz[1])],
        [(0, 1, wx[0] * wy[0]), (2, 3, wx[0] * wy[1]), (4, 5, wx[1] * wy[0]), (6, 7, wx[1] * wy[1])],
    ]
}

#[inline]
fn axis_weights(q: &CellQuery) -> [[f64; 2]; 3] {
    [
        [1.0 - q.frac[0], q.frac[0]],
        [1.0 - q.frac[1], q.frac[1]],
        [1.0 - q.frac[2], q.frac[2]],
    ]
}

/// `D×D×D×K` table of `f32` basis vectors over a [`Lattice3`].
///
/// Layout: entry `(ix, iy, iz, k)` lives at `((ix·D + iy)·D + iz)·K + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lut {
    lattice: Lattice3,
    k: usize,
    data: Vec<f32>,
}

impl Lut {
    pub fn new(lattice: Lattice3, k: usize, data: Vec<f32>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        let expected = lattice.node_count() * k;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "LUT over {}³ nodes with K={k} needs {expected} values, got {}",
                lattice.d(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("LUT entry {i}")));
        }
        Ok(Self { lattice, k, data })
    }

    /// Tabulates `f` at every node; `f` writes `K` values into its buffer.
    pub fn from_fn(lattice: Lattice3, k: usize, mut f: impl FnMut(Point3, &mut [f64])) -> Result<Self> {
        let mut data = Vec::with_capacity(lattice.node_count() * k);
        let mut buf = vec![0.0; k];
        for node in 0..lattice.node_count() {
            f(lattice.node_position(node), &mut buf);
            data.extend(buf.iter().map(|&v| v as f32));
        }
        Self::new(lattice, k, data)
    }

    #[inline]
    pub fn lattice(&self) -> &Lattice3 {
        &self.lattice
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn node(&self, flat: usize) -> &[f32] {
        &self.data[flat * self.k..(flat + 1) * self.k]
    }

    #[inline]
    fn corner_rows(&self, q: &CellQuery) -> [&[f32]; 8] {
        q.corners.map(|c| self.node(c))
    }

    pub fn locate(&self, p: Point3) -> Result<CellQuery> {
        self.lattice.locate(p)
    }

    /// Interpolated embedding for a located query, written into `out`.
    #[inline]
    pub fn interpolate_into(&self, q: &CellQuery, out: &mut [f64]) {
        blend(q, self.corner_rows(q), out);
    }

    pub fn interpolate(&self, q: &CellQuery) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.interpolate_into(q, &mut out);
        out
    }

    /// Locate + interpolate.
    pub fn embed(&self, p: Point3) -> Result<Vec<f64>> {
        Ok(self.interpolate(&self.locate(p)?))
    }

    /// `K×3` Jacobian of the interpolated embedding in world units. Axes on
    /// which the query was clamped have zero derivative.
    pub fn spatial_jacobian(&self, q: &CellQuery) -> Matrix {
        let mut out = Matrix::zeros(self.k, 3);
        blend_jacobian(q, self.lattice.cell_scale(), self.corner_rows(q), &mut out);
        out
    }

    /// Gradient of a single channel, i.e. one row of [`Self::spatial_jacobian`].
    pub fn channel_gradient(&self, q: &CellQuery, channel: usize) -> [f64; 3] {
        let scale = self.lattice.cell_scale();
        let pairs = axis_pairs(q);
        let v = |j: usize| f64::from(self.data[q.corners[j] * self.k + channel]);
        let mut g = [0.0; 3];
        for axis in 0..3 {
            if !q.clamped[axis] {
                let mut acc = 0.0;
                for &(lo, hi, w) in &pairs[axis] {
                    acc += (v(hi) - v(lo)) * w;
                }
                g[axis] = acc * scale[axis];
            }
        }
        g
    }

    /// Payload size in bytes (4 per entry).
    pub fn payload_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }
}

/// Gradient accumulator shaped like a [`Lut`].
#[derive(Clone, Debug, PartialEq)]
pub struct LutGrad {
    k: usize,
    data: Vec<f64>,
}

impl LutGrad {
    pub fn new(nodes: usize, k: usize) -> Self {
        Self {
            k,
            data: vec![0.0; nodes * k],
        }
    }

    pub fn for_lut(lut: &Lut) -> Self {
        Self::new(lut.lattice().node_count(), lut.k())
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.k..(flat + 1) * self.k]
    }

    pub fn node_mut(&mut self, flat: usize) -> &mut [f64] {
        &mut self.data[flat * self.k..(flat + 1) * self.k]
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Distributes `upstream` onto the eight corners of `q` by their weights.
    pub fn scatter(&mut self, q: &CellQuery, upstream: &[f64]) {
        debug_assert_eq!(upstream.len(), self.k);
        for (w, &c) in q.weights.iter().zip(&q.corners) {
            if *w == 0.0 {
                continue;
            }
            crate::linalg::axpy(*w, upstream, self.node_mut(c));
        }
    }

    /// Adds another accumulator (per-worker reduction).
    pub fn merge(&mut self, other: &LutGrad) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Free-function form of [`LutGrad::scatter`].
pub fn scatter_gradient(acc: &mut LutGrad, q: &CellQuery, upstream: &[f64]) {
    acc.scatter(q, upstream);
}
