//! Point-set feature embeddings backed by trilinearly interpolated lookup
//! tables, with analytic Jacobians and inverse-compositional registration.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aggregate;
pub mod bench;
pub mod dataio;
pub mod embed;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod mlp;
pub mod registration;
pub mod se3;
pub mod training;

/// A point in R³.
pub type Point3 = [f64; 3];

pub use aggregate::{max_aggregate, GlobalFeature};
pub use dataio::PointCloud;
pub use embed::{global_feature, Embedder};
pub use error::{Error, Result};
pub use lattice::{Lattice3, Lut, LutGrad};
pub use linalg::{Matrix, Vector};
pub use mlp::{Activation, Mlp};
pub use se3::{RigidTransform, Twist};
pub use registration::{register, JacobianMode, RegistrationConfig, RegistrationResult};
pub use training::{evaluate, train, train_from, Checkpoint, Classifier, Model, TrainConfig, Trainer, Variant};
