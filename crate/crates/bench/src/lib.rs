//! Shared fixtures for the criterion benchmarks.

use luti_core::bench::{embedding_mlp, random_cloud};
use luti_core::lattice::{Lattice3, Lut};
use luti_core::mlp::{tabulate, Mlp};
use luti_core::PointCloud;

/// Hidden widths of the benchmarked embedding network.
pub const HIDDEN: [usize; 4] = [64, 64, 64, 128];
pub const POINTS: usize = 1000;
pub const K: usize = 1024;
pub const DS: [usize; 3] = [4, 8, 16];

pub struct Fixture {
    pub mlp: Mlp,
    pub cloud: PointCloud,
}

impl Fixture {
    pub fn new(points: usize, k: usize) -> Self {
        Self {
            mlp: embedding_mlp(&HIDDEN, k, 0).expect("valid widths"),
            cloud: random_cloud(points, 1).expect("non-empty cloud"),
        }
    }

    pub fn lut(&self, d: usize) -> Lut {
        tabulate(&self.mlp, &Lattice3::unit(d).expect("d >= 2")).expect("tabulation")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new(POINTS, K)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use luti_core::embed::Embedder;

    #[test]
    fn fixture_shapes() {
        let f = Fixture::new(10, 8);
        assert_eq!(f.cloud.len(), 10);
        assert_eq!(f.mlp.out_dim(), 8);
        assert_eq!(f.lut(3).dim(), 8);
    }
}
