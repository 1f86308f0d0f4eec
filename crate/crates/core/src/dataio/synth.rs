use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cloud::{normalize, PointCloud};
use crate::error::{Error, Result};
use crate::Point3;

/// Parametric surface classes for the synthetic dataset. The y axis is up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Plane,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Sphere, Shape::Cube, Shape::Cylinder, Shape::Torus, Shape::Plane];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
            Shape::Plane => "plane",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape '{s}'")))
    }
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

/// Per-instance variation applied before normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Each axis is scaled by a factor drawn from `[1 − s, 1 + s]`.
    pub scale_jitter: f64,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub noise: f64,
    /// Rotate each instance about the up axis by a uniform angle.
    pub random_yaw: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            scale_jitter: 0.25,
            noise: 0.01,
            random_yaw: true,
        }
    }
}

fn unit_normal<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    loop {
        let v: Point3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

/// Uniform samples from the canonical surface of `shape`: the unit sphere,
/// the surface of `[−1, 1]³`, a radius-1 height-2 closed cylinder, a torus
/// with radii 1 and 0.35, or the square `[−1, 1]²` in the `y = 0` plane.
pub fn sample_shape<R: Rng + ?Sized>(shape: Shape, n: usize, rng: &mut R) -> Vec<Point3> {
    let tau = std::f64::consts::TAU;
    (0..n)
        .map(|_| match shape {
            Shape::Sphere => unit_normal(rng),
            Shape::Cube => {
                let face = rng.gen_range(0..6);
                let (a, b) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Shape::Cylinder => {
                // side area 4π, caps 2π in total
                let t = rng.gen_range(0.0..tau);
                if rng.gen::<f64>() < 2.0 / 3.0 {
                    [t.cos(), rng.gen_range(-1.0..=1.0), t.sin()]
                } else {
                    let r = rng.gen::<f64>().sqrt();
                    let y = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    [r * t.cos(), y, r * t.sin()]
                }
            }
            Shape::Torus => loop {
                let u = rng.gen_range(0.0..tau);
                let v = rng.gen_range(0.0..tau);
                let w = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                if rng.gen::<f64>() <= w {
                    let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
                    break [ring * u.cos(), TORUS_MINOR * v.sin(), ring * u.sin()];
                }
            },
            Shape::Plane => [rng.gen_range(-1.0..=1.0), 0.0, rng.gen_range(-1.0..=1.0)],
        })
        .collect()
}

/// One normalized, labeled instance of `shape` with per-instance variation.
pub fn synth_instance<R: Rng + ?Sized>(
    shape: Shape,
    label: usize,
    n_points: usize,
    params: &SynthParams,
    rng: &mut R,
) -> Result<PointCloud> {
    let s = params.scale_jitter;
    let scale: [f64; 3] = if s > 0.0 {
        [rng.gen_range(1.0 - s..=1.0 + s), rng.gen_range(1.0 - s..=1.0 + s), rng.gen_range(1.0 - s..=1.0 + s)]
    } else {
        [1.0; 3]
    };
    let yaw = if params.random_yaw {
        rng.gen_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let (sy, cy) = yaw.sin_cos();
    let noise = Normal::new(0.0, params.noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pts = sample_shape(shape, n_points, rng)
        .into_iter()
        .map(|p| {
            let q = [p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]];
            let r = [cy * q[0] + sy * q[2], q[1], -sy * q[0] + cy * q[2]];
            if params.noise > 0.0 {
                r.map(|v| v + noise.sample(rng))
            } else {
                r
            }
        })
        .collect();
    Ok(normalize(&PointCloud::new(pts)?)?.with_label(Some(label)))
}

/// Deterministic labeled dataset: `per_class` instances of each shape, in
/// class order, each normalized to `[−1, 1]³`. Labels index into `classes`.
pub fn synth_dataset(classes: &[Shape], per_class: usize, n_points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    synth_dataset_with(classes, per_class, n_points, seed, &SynthParams::default())
}

pub fn synth_dataset_with(
    classes: &[Shape],
    per_class: usize,
    n_points: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<PointCloud>> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", classes.len())));
    }
    if per_class == 0 || n_points == 0 {
        return Err(Error::Empty("synthetic dataset size"));
    }
    if !(0.0..1.0).contains(&params.scale_jitter) {
        return Err(Error::InvalidArgument(format!("scale jitter {} outside [0, 1)", params.scale_jitter)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for (label, &shape) in classes.iter().enumerate() {
        for _ in 0..per_class {
            out.push(synth_instance(shape, label, n_points, params, &mut rng)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_by_seed() {
        let classes = [Shape::Sphere, Shape::Cube, Shape::Torus];
        let a = synth_dataset(&classes, 3, 64, 11).unwrap();
        let b = synth_dataset(&classes, 3, 64, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&classes, 3, 64, 12).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 9);
        assert_eq!(a[4].label(), Some(1));
        for cloud in &a {
            assert_eq!(cloud.len(), 64);
            assert!((cloud.max_abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in sample_shape(Shape::Sphere, 5000, &mut rng) {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn surfaces_are_on_their_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in sample_shape(Shape::Cube, 2000, &mut rng) {
            let m = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert_eq!(m, 1.0);
        }
        for p in sample_shape(Shape::Cylinder, 2000, &mut rng) {
            let r = (p[0] * p[0] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-12 || (p[1].abs() == 1.0 && r <= 1.0));
        }
        for p in sample_shape(Shape::Torus, 2000, &mut rng) {
            let ring = (p[0] * p[0] + p[2] * p[2]).sqrt() - TORUS_MAJOR;
            assert!((ring * ring + p[1] * p[1]).sqrt() - TORUS_MINOR < 1e-12);
        }
        for p in sample_shape(Shape::Plane, 100, &mut rng) {
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_dataset(&[Shape::Sphere], 2, 10, 0).is_err());
        assert!(synth_dataset(&[Shape::Sphere, Shape::Cube], 0, 10, 0).is_err());
        assert!("cone".parse::<Shape>().is_err());
        assert_eq!("torus".parse::<Shape>().unwrap(), Shape::Torus);
    }
}
