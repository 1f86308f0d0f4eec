use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::PointCloud;
use crate::lattice::Lattice3;

/// Standard deviation of the training-time coordinate jitter.
pub const JITTER_SIGMA: f64 = 0.02;

/// Rotates about the up (y) axis by `angle`, adds Gaussian noise of standard
/// deviation `sigma` to every coordinate, then clamps into the lattice.
pub fn augment_with<R: Rng + ?Sized>(
    cloud: &PointCloud,
    lattice: &Lattice3,
    angle: f64,
    sigma: f64,
    rng: &mut R,
) -> PointCloud {
    let (s, c) = angle.sin_cos();
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    cloud.map_points(|p| {
        let mut q = [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]];
        if sigma > 0.0 {
            for v in &mut q {
                *v += noise.sample(rng);
            }
        }
        lattice.clamp(q)
    })
}

/// Random up-axis rotation with angle in `[0, 2π)` and jitter of
/// [`JITTER_SIGMA`], clamped into the lattice.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, lattice: &Lattice3, rng: &mut R) -> PointCloud {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    augment_with(cloud, lattice, angle, JITTER_SIGMA, rng)
}
