//! Rigid-body motions: twists in se(3), the exponential map, and the
//! Jacobians that carry point-space gradients onto the pose parameters.
//!
//! A twist is ordered `(ω₁, ω₂, ω₃, v₁, v₂, v₃)`. Its generators are chosen so
//! that the derivative of `exp(ξ)·p` at `ξ = 0` is `[[p]ₓ | I₃]`, with
//! `[p]ₓ = [[0, −z, y], [z, 0, −x], [−y, x, 0]]`. Equivalently the rotation
//! part of `exp(ξ)` is `exp(−[ω]ₓ)`: a positive `ω₃` turns the x axis towards
//! −y.

use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::dataio::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::Point3;

/// Below this rotation angle `exp` switches to a second-order Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

type Mat3 = [[f64; 3]; 3];

/// Element of se(3), ordered `(ω, v)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist(pub [f64; 6]);

impl Twist {
    pub fn new(omega: [f64; 3], v: [f64; 3]) -> Self {
        Twist([omega[0], omega[1], omega[2], v[0], v[1], v[2]])
    }

    pub fn zero() -> Self {
        Twist([0.0; 6])
    }

    /// Twist with `t` in slot `k` and zeros elsewhere.
    pub fn basis(k: usize, t: f64) -> Self {
        let mut x = [0.0; 6];
        x[k] = t;
        Twist(x)
    }

    pub fn omega(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn v(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        Twist(self.0.map(|x| -x))
    }
}

impl From<[f64; 6]> for Twist {
    fn from(x: [f64; 6]) -> Self {
        Twist(x)
    }
}

/// 4×4 matrix representation of a twist under this module's generators.
pub fn hat(xi: &Twist) -> [[f64; 4]; 4] {
    let s = skew(xi.omega());
    let v = xi.v();
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = -s[i][j];
        }
        m[i][3] = v[i];
    }
    m
}

/// Element of SE(3): `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: IDENTITY3,
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            rotation: IDENTITY3,
            translation: t,
        }
    }

    /// Builds a transform from a row-major 4×4 matrix, checking that the
    /// rotation block is orthonormal with unit determinant and that the
    /// bottom row is `(0, 0, 0, 1)`.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transform matrix".into()));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument(format!("bottom row must be (0,0,0,1), got {:?}", m[3])));
        }
        let mut rotation = [[0.0; 3]; 3];
        let mut translation = [0.0; 3];
        for i in 0..3 {
            rotation[i].copy_from_slice(&m[i][..3]);
            translation[i] = m[i][3];
        }
        let g = Self {
            rotation,
            translation,
        };
        g.check(1e-6)?;
        Ok(g)
    }

    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&self.rotation[i]);
            m[i][3] = self.translation[i];
        }
        m[3][3] = 1.0;
        m
    }

    /// Verifies `RᵀR = I` and `det R = 1` to within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                if (d - e).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "rotation block is not orthonormal (RᵀR[{i}][{j}] = {d})"
                    )));
                }
            }
        }
        let det = det3(r);
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!("rotation determinant is {det}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose3(&self.rotation);
        let t = mat3_vec(&rt, self.translation);
        Self {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// Angle of the rotation block, in radians.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let tr = r[0][0] + r[1][1] + r[2][2];
        let s = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
        let sin = 0.5 * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        sin.atan2(0.5 * (tr - 1.0))
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    /// `(a * b)·p = a·(b·p)`.
    fn mul(self, b: RigidTransform) -> RigidTransform {
        let rotation = mat3_mul(&self.rotation, &b.rotation);
        let rt = mat3_vec(&self.rotation, b.translation);
        RigidTransform {
            rotation,
            translation: [
                rt[0] + self.translation[0],
                rt[1] + self.translation[1],
                rt[2] + self.translation[2],
            ],
        }
    }
}

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// `[a]ₓ`, the matrix of `x ↦ a × x`.
#[inline]
pub fn skew(a: [f64; 3]) -> Mat3 {
    [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
}

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

fn mat3_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

fn transpose3(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn lin3(a: f64, x: &Mat3, b: f64, y: &Mat3) -> Mat3 {
    let mut c = IDENTITY3;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += a * x[i][j] + b * y[i][j];
        }
    }
    c
}

/// Rotation and left-Jacobian coefficients `(A, B, C)` such that
/// `R = I + A·K + B·K²` and `V = I + B·K + C·K²` for `K = [φ]ₓ`, `θ = |φ|`.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        (1.0, 0.5, 1.0 / 6.0)
    } else {
        let half = 0.5 * theta;
        let one_minus_cos = 2.0 * half.sin() * half.sin();
        let t2 = theta * theta;
        (theta.sin() / theta, one_minus_cos / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

fn exp_with(xi: &Twist, (a, b, c): (f64, f64, f64)) -> RigidTransform {
    let w = xi.omega();
    let k = skew([-w[0], -w[1], -w[2]]);
    let k2 = mat3_mul(&k, &k);
    let rotation = lin3(a, &k, b, &k2);
    let v = lin3(b, &k, c, &k2);
    RigidTransform {
        rotation,
        translation: mat3_vec(&v, xi.v()),
    }
}

fn angle(w: [f64; 3]) -> f64 {
    (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt()
}

/// Exponential map se(3) → SE(3).
pub fn exp(xi: &Twist) -> RigidTransform {
    exp_with(xi, exp_coefficients(angle(xi.omega())))
}

/// Second-order Taylor expansion of [`exp`], exposed so the branch switch can
/// be checked.
#[doc(hidden)]
pub fn exp_taylor(xi: &Twist) -> RigidTransform {
    exp_with(xi, (1.0, 0.5, 1.0 / 6.0))
}

/// Logarithm SE(3) → se(3), inverse of [`exp`] for rotation angles below π.
pub fn log(g: &RigidTransform) -> Twist {
    let theta = g.rotation_angle();
    let r = &g.rotation;
    // axis-angle of R itself (standard generators)
    let phi = if theta < 1e-10 {
        [
            0.5 * (r[2][1] - r[1][2]),
            0.5 * (r[0][2] - r[2][0]),
            0.5 * (r[1][0] - r[0][1]),
        ]
    } else if std::f64::consts::PI - theta > 1e-6 {
        let s = theta / (2.0 * theta.sin());
        [s * (r[2][1] - r[1][2]), s * (r[0][2] - r[2][0]), s * (r[1][0] - r[0][1])]
    } else {
        // near π: axis from the diagonal of (R + I)/2
        let mut axis = [0.0; 3];
        let i = (0..3).max_by(|&a, &b| r[a][a].total_cmp(&r[b][b])).unwrap();
        axis[i] = ((r[i][i] + 1.0) * 0.5).max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = (r[i][j] + r[j][i]) / (4.0 * axis[i]);
            }
        }
        let n = angle(axis);
        let sign = if (r[2][1] - r[1][2]) * axis[0] + (r[0][2] - r[2][0]) * axis[1] + (r[1][0] - r[0][1]) * axis[2] < 0.0 {
            -1.0
        } else {
            1.0
        };
        axis.map(|a| sign * theta * a / n)
    };
    let k = skew(phi);
    let k2 = mat3_mul(&k, &k);
    let c = if theta < 1e-5 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
    };
    let v_inv = lin3(-0.5, &k, c, &k2);
    let v = mat3_vec(&v_inv, g.translation);
    Twist::new([-phi[0], -phi[1], -phi[2]], v)
}

/// `∂(exp(ξ)·p)/∂ξ` at `ξ = 0`: `[[p]ₓ | I₃]`, a 3×6 matrix.
pub fn point_jacobian(p: Point3) -> Matrix {
    let s = skew(p);
    let mut m = Matrix::zeros(3, 6);
    for i in 0..3 {
        m.row_mut(i)[..3].copy_from_slice(&s[i]);
        m[(i, 3 + i)] = 1.0;
    }
    m
}

/// Pulls a `K×3` spatial Jacobian back onto the twist: `spatial · point_jacobian(p)`.
pub fn pullback(spatial: &Matrix, p: Point3) -> Result<Matrix> {
    if spatial.cols() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "spatial Jacobian must have 3 columns, got {}",
            spatial.cols()
        )));
    }
    matmul(spatial, &point_jacobian(p))
}

/// Row form of [`pullback`] for a single gradient `g = ∂f/∂p`.
#[inline]
pub fn pullback_row(g: [f64; 3], p: Point3) -> [f64; 6] {
    // gᵀ·[p]ₓ = (g × p)ᵀ
    [
        g[1] * p[2] - g[2] * p[1],
        g[2] * p[0] - g[0] * p[2],
        g[0] * p[1] - g[1] * p[0],
        g[0],
        g[1],
        g[2],
    ]
}

/// Applies `g` to every point of `cloud`, keeping its label.
pub fn transform_cloud(g: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    cloud.map_points(|p| g.apply(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng, scale: f64) -> Twist {
        let mut x = [0.0; 6];
        for v in &mut x {
            *v = rng.gen_range(-scale..scale);
        }
        Twist(x)
    }

    /// Truncated power series of the 4×4 matrix exponential.
    fn series_exp(xi: &Twist, terms: usize) -> [[f64; 4]; 4] {
        let h = hat(xi);
        let mut sum = [[0.0; 4]; 4];
        let mut term = [[0.0; 4]; 4];
        for i in 0..4 {
            term[i][i] = 1.0;
        }
        for n in 0..terms {
            for i in 0..4 {
                for j in 0..4 {
                    sum[i][j] += term[i][j];
                }
            }
            let mut next = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    next[i][j] = (0..4).map(|k| term[i][k] * h[k][j]).sum::<f64>() / (n + 1) as f64;
                }
            }
            term = next;
        }
        sum
    }

    fn max_diff(a: [[f64; 4]; 4], b: [[f64; 4]; 4]) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_twist_is_identity() {
        assert_eq!(exp(&Twist::zero()), RigidTransform::identity());
    }

    #[test]
    fn pure_translation() {
        let g = exp(&Twist::new([0.0; 3], [1.0, 2.0, 3.0]));
        assert_eq!(g.rotation, IDENTITY3);
        assert_eq!(g.translation, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let xi = Twist::new([0.0, 0.0, std::f64::consts::FRAC_PI_2], [0.0; 3]);
        let g = exp(&xi);
        let expect = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.rotation[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        assert!((g.rotation_angle() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(max_diff(g.to_matrix(), series_exp(&xi, 20)) < 1e-10);
    }

    #[test]
    fn matches_series_on_random_twists() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let xi = random_twist(&mut rng, 1.0);
            let g = exp(&xi);
            g.check(1e-9).unwrap();
            assert!(max_diff(g.to_matrix(), series_exp(&xi, 30)) < 1e-10);
        }
    }

    #[test]
    fn exp_of_negation_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut xi = random_twist(&mut rng, 1.0);
            let n = xi.norm();
            if n > 1.0 {
                xi = Twist(xi.0.map(|x| x / n));
            }
            let prod = exp(&xi) * exp(&-xi);
            assert!(max_diff(prod.to_matrix(), RigidTransform::identity().to_matrix()) < 1e-9);
        }
    }

    #[test]
    fn small_angle_branches_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut w = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = angle(w);
            w = w.map(|x| x * 1e-6 / n);
            let xi = Twist::new(w, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let a = exp(&xi).to_matrix();
            let b = exp_taylor(&xi).to_matrix();
            let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
            assert!(max_diff(a, b) <= 1e-8 * scale);
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 1.5);
            let back = log(&exp(&xi));
            for (a, b) in xi.0.iter().zip(&back.0) {
                assert!((a - b).abs() < 1e-9, "{xi:?} -> {back:?}");
            }
        }
        let tiny = Twist([1e-12, -2e-12, 0.0, 1e-3, 0.0, 0.0]);
        let back = log(&exp(&tiny));
        for (a, b) in tiny.0.iter().zip(&back.0) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn log_near_half_turn() {
        let xi = Twist::new([0.0, std::f64::consts::PI - 1e-9, 0.0], [0.1, 0.2, 0.3]);
        let back = log(&exp(&xi));
        assert!((exp(&back).to_matrix()[0][0] - exp(&xi).to_matrix()[0][0]).abs() < 1e-6);
        assert!((back.norm() - xi.norm()).abs() < 1e-5);
    }

    #[test]
    fn point_jacobian_layout() {
        let j = point_jacobian([0.0; 3]);
        for i in 0..3 {
            assert_eq!(j.row(i)[..3], [0.0; 3]);
            for c in 0..3 {
                assert_eq!(j[(i, 3 + c)], if i == c { 1.0 } else { 0.0 });
            }
        }
        let j = point_jacobian([1.0, 0.0, 0.0]);
        assert_eq!(j.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(j.row(1), &[0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        assert_eq!(j.row(2), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let j = point_jacobian(p);
            for k in 0..6 {
                let pp = exp(&Twist::basis(k, h)).apply(p);
                let pm = exp(&Twist::basis(k, -h)).apply(p);
                for i in 0..3 {
                    let fd = (pp[i] - pm[i]) / (2.0 * h);
                    assert!((fd - j[(i, k)]).abs() <= 1e-6 * j[(i, k)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn pullback_cases() {
        let p = [0.3, -0.2, 0.9];
        let z = pullback(&Matrix::zeros(4, 3), p).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(pullback(&Matrix::identity(3), p).unwrap(), point_jacobian(p));
        assert!(pullback(&Matrix::zeros(2, 2), p).is_err());
        let g = [0.7, -1.2, 0.4];
        let row = pullback_row(g, p);
        let full = pullback(&Matrix::from_rows(&[g]).unwrap(), p).unwrap();
        for k in 0..6 {
            assert!((row[k] - full[(0, k)]).abs() < 1e-15);
        }
    }

    #[test]
    fn transform_and_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Point3> = (0..30)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        assert_eq!(transform_cloud(&RigidTransform::identity(), &cloud), cloud);
        let shifted = transform_cloud(&RigidTransform::translation([0.5, -1.0, 2.0]), &cloud);
        for (a, b) in shifted.points().iter().zip(&pts) {
            assert_eq!(*a, [b[0] + 0.5, b[1] - 1.0, b[2] + 2.0]);
        }
        let g = exp(&random_twist(&mut rng, 1.0));
        let back = transform_cloud(&g.inverse(), &transform_cloud(&g, &cloud));
        for (a, b) in back.points().iter().zip(&pts) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn from_matrix_validates() {
        let g = exp(&Twist([0.1, 0.2, 0.3, 1.0, 2.0, 3.0]));
        assert_eq!(RigidTransform::from_matrix(g.to_matrix()).unwrap(), g);
        let mut bad = g.to_matrix();
        bad[0][0] *= 2.0;
        assert!(RigidTransform::from_matrix(bad).is_err());
        let mut bad = g.to_matrix();
        bad[3][0] = 1.0;
        assert!(RigidTransform::from_matrix(bad).is_err());
    }
}
