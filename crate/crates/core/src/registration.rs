//! Inverse-compositional rigid registration on global features.
//!
//! The target feature `a_T` and the `K×6` Jacobian `J` are computed once. Each
//! iteration evaluates `r = max φ(G·P_S) − a_T`, solves `J·Δξ ≈ r` in the
//! least-squares sense and updates `G ← exp(Δξ)·G`. `J` is the derivative of
//! the target feature under the warp `exp(−ξ)`, so its columns carry the
//! sign of the inverse-compositional step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::GlobalFeature;
use crate::dataio::PointCloud;
use crate::embed::{global_feature, Embedder};
use crate::error::{Error, Result};
use crate::linalg::{pinv_apply, Matrix, Vector, DEFAULT_RIDGE};
use crate::se3::{exp, pullback_row, transform_cloud, RigidTransform, Twist};
use crate::Point3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// Finite differences over six perturbed warps of the target.
    Approx,
    /// Analytic: embedding gradient at each channel's argmax point, pulled
    /// back onto the twist.
    #[default]
    Canonical,
}

impl fmt::Display for JacobianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JacobianMode::Approx => "approx",
            JacobianMode::Canonical => "canonical",
        })
    }
}

impl FromStr for JacobianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(JacobianMode::Approx),
            "canonical" => Ok(JacobianMode::Canonical),
            _ => Err(Error::InvalidArgument(format!("unknown Jacobian mode '{s}' (expected approx or canonical)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub max_iters: usize,
    /// Stop once `‖Δξ‖` falls below this.
    pub tol: f64,
    pub mode: JacobianMode,
    /// Finite-difference step for [`JacobianMode::Approx`].
    pub t: f64,
    pub ridge: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-7,
            mode: JacobianMode::Canonical,
            t: 1e-2,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::InvalidArgument(format!("perturbation t must be positive, got {}", self.t)));
        }
        if !(self.tol >= 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidArgument("tol and ridge must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Estimated transform mapping the source onto the target.
    pub transform: RigidTransform,
    /// `‖r‖` at the start of each iteration.
    pub residual_norms: Vec<f64>,
    /// `‖r‖` at the returned transform.
    pub final_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `max φ(G·P_S) − a_T`.
pub fn residual<E: Embedder + ?Sized>(
    embedder: &E,
    g: &RigidTransform,
    source: &PointCloud,
    target_feature: &GlobalFeature,
) -> Result<Vector> {
    if target_feature.k() != embedder.dim() {
        return Err(Error::DimensionMismatch(format!(
            "target feature has {} channels, embedder {}",
            target_feature.k(),
            embedder.dim()
        )));
    }
    let warped = transform_cloud(g, source);
    let a = global_feature(embedder, warped.points())?;
    Ok(Vector(a.values.iter().zip(&target_feature.values).map(|(x, y)| x - y).collect()))
}

/// Finite-difference Jacobian: column `k` is
/// `(max φ(exp(−t·T_k)·P_T) − max φ(P_T)) / t`.
pub fn approx_jacobian<E: Embedder + ?Sized>(embedder: &E, target: &PointCloud, t: f64) -> Result<Matrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("perturbation t must be positive, got {t}")));
    }
    let base = global_feature(embedder, target.points())?;
    let k = embedder.dim();
    let mut j = Matrix::zeros(k, 6);
    for col in 0..6 {
        let warped = transform_cloud(&exp(&Twist::basis(col, -t)), target);
        let a = global_feature(embedder, warped.points())?;
        for ch in 0..k {
            j[(ch, col)] = (a.values[ch] - base.values[ch]) / t;
        }
    }
    Ok(j)
}

/// Among points tied for the maximum of channel `ch`, the smallest in
/// lexicographic coordinate order, so the choice does not depend on the
/// order of the cloud.
fn argmax_point(embeddings: &Matrix, points: &[Point3], feature: &GlobalFeature, ch: usize) -> Point3 {
    let best = feature.values[ch];
    let mut p = points[feature.argmax[ch]];
    for (i, q) in points.iter().enumerate().skip(feature.argmax[ch] + 1) {
        if embeddings[(i, ch)] == best && q.iter().zip(&p).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less) {
            p = *q;
        }
    }
    p
}

/// Analytic Jacobian: row `k` is `−∇φ_k(p_k)·[[p_k]ₓ | I]` where `p_k` is the
/// target point attaining the maximum of channel `k`.
pub fn canonical_jacobian<E: Embedder + ?Sized>(
    embedder: &E,
    target: &PointCloud,
    feature: &GlobalFeature,
) -> Result<Matrix> {
    let k = embedder.dim();
    if feature.k() != k {
        return Err(Error::DimensionMismatch(format!("feature has {} channels, embedder {k}", feature.k())));
    }
    if feature.argmax.iter().any(|&i| i >= target.len()) {
        return Err(Error::InvalidArgument("feature argmax indexes past the target cloud".into()));
    }
    let emb = embedder.embed_points(target.points())?;
    let mut j = Matrix::zeros(k, 6);
    for ch in 0..k {
        let p = argmax_point(&emb, target.points(), feature, ch);
        let row = pullback_row(embedder.channel_gradient(p, ch)?, p);
        for (dst, v) in j.row_mut(ch).iter_mut().zip(row) {
            *dst = -v;
        }
    }
    Ok(j)
}

/// Jacobian of the target feature for `mode`.
pub fn target_jacobian<E: Embedder + ?Sized>(
    embedder: &E,
    target: &PointCloud,
    feature: &GlobalFeature,
    cfg: &RegistrationConfig,
) -> Result<Matrix> {
    match cfg.mode {
        JacobianMode::Approx => approx_jacobian(embedder, target, cfg.t),
        JacobianMode::Canonical => canonical_jacobian(embedder, target, feature),
    }
}

/// Estimates `G` such that `G·source` aligns with `target`.
///
/// Of all transforms visited, the one with the smallest residual norm is
/// returned, so the reported residual never exceeds the initial one.
pub fn register<E: Embedder + ?Sized>(
    embedder: &E,
    source: &PointCloud,
    target: &PointCloud,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let a_t = global_feature(embedder, target.points())?;
    let j = target_jacobian(embedder, target, &a_t, cfg)?;

    let mut g = RigidTransform::identity();
    let mut best = (f64::INFINITY, g);
    let mut norms = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for it in 0..cfg.max_iters {
        let r = residual(embedder, &g, source, &a_t)?;
        let rn = r.norm();
        norms.push(rn);
        if rn < best.0 {
            best = (rn, g);
        }
        let step = pinv_apply(&j, &r, cfg.ridge)?;
        let dxi = Twist(step[..].try_into().expect("six twist components"));
        if !dxi.is_finite() {
            return Err(Error::NonFinite(format!("registration update at iteration {}", it + 1)));
        }
        g = exp(&dxi) * g;
        if dxi.norm() < cfg.tol {
            converged = true;
            break;
        }
    }
    let rn = residual(embedder, &g, source, &a_t)?.norm();
    if rn <= best.0 {
        best = (rn, g);
    }
    Ok(RegistrationResult {
        transform: best.1,
        iterations: norms.len(),
        residual_norms: norms,
        final_residual_norm: best.0,
        converged,
    })
}

/// Rotation error in degrees: the angle of `R_estᵀ·R_true`.
pub fn rotation_error_deg(est: &RigidTransform, truth: &RigidTransform) -> f64 {
    (est.inverse() * *truth).rotation_angle().to_degrees()
}

/// `‖t_est − t_true‖`.
pub fn translation_error(est: &RigidTransform, truth: &RigidTransform) -> f64 {
    let d: f64 = (0..3).map(|i| (est.translation[i] - truth.translation[i]).powi(2)).sum();
    d.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::max_aggregate;
    use crate::lattice::{Lattice3, Lut};
    use crate::se3::log;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, radius: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| [rng.gen_range(-radius..radius), rng.gen_range(-radius..radius), rng.gen_range(-radius..radius)])
                .collect(),
        )
        .unwrap()
    }

    /// Smooth test embedding `x, y, z, x², …` sampled on a fine lattice.
    fn poly_lut(d: usize) -> Lut {
        Lut::from_fn(Lattice3::unit(d).unwrap(), 9, |p, o| {
            let [x, y, z] = p;
            o.copy_from_slice(&[x, y, z, -x, -y, -z, x * y + 0.3 * z, y * z - 0.2 * x, (x - y) * (x + z)]);
        })
        .unwrap()
    }

    #[test]
    fn residual_zero_at_identity() {
        let lut = poly_lut(9);
        let c = cloud(50, 0.7, 1);
        let a = global_feature(&lut, c.points()).unwrap();
        let r = residual(&lut, &RigidTransform::identity(), &c, &a).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_against_zero_feature_is_global_feature() {
        let lut = poly_lut(9);
        let c = cloud(50, 0.7, 2);
        let g = exp(&Twist([0.05, -0.02, 0.1, 0.03, 0.0, -0.04]));
        let zero = GlobalFeature {
            values: vec![0.0; 9],
            argmax: vec![0; 9],
        };
        let r = residual(&lut, &g, &c, &zero).unwrap();
        // independent recomputation
        let warped: Vec<Point3> = c.points().iter().map(|p| g.apply(*p)).collect();
        let mut rows = Vec::new();
        for p in &warped {
            rows.push(lut.embed(*p).unwrap());
        }
        let a = max_aggregate(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(r.0, a.values);
    }

    #[test]
    fn residual_checks_width() {
        let lut = poly_lut(3);
        let c = cloud(5, 0.5, 3);
        let bad = GlobalFeature {
            values: vec![0.0; 2],
            argmax: vec![0; 2],
        };
        assert!(residual(&lut, &RigidTransform::identity(), &c, &bad).is_err());
    }

    #[test]
    fn constant_embedder_gives_zero_jacobians() {
        let lut = Lut::from_fn(Lattice3::unit(4).unwrap(), 3, |_, o| o.fill(0.5)).unwrap();
        let c = cloud(20, 0.8, 4);
        let a = global_feature(&lut, c.points()).unwrap();
        assert!(approx_jacobian(&lut, &c, 1e-2).unwrap().as_slice().iter().all(|v| *v == 0.0));
        assert!(canonical_jacobian(&lut, &c, &a).unwrap().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_x_embedding_signs() {
        let lut = Lut::from_fn(Lattice3::unit(5).unwrap(), 1, |p, o| o[0] = p[0]).unwrap();
        let single = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let a = global_feature(&lut, single.points()).unwrap();
        let jc = canonical_jacobian(&lut, &single, &a).unwrap();
        let expect = [0.0, 0.0, 0.0, -1.0, 0.0, 0.0];
        for k in 0..6 {
            assert!((jc[(0, k)] - expect[k]).abs() < 1e-12, "{:?}", jc.row(0));
        }
        let aligned = PointCloud::new(vec![[0.1, 0.1, 0.1], [0.3, -0.2, 0.05], [-0.4, 0.2, 0.2]]).unwrap();
        let ja = approx_jacobian(&lut, &aligned, 1e-3).unwrap();
        assert!((ja[(0, 3)] + 1.0).abs() < 1e-3);
        let ja = approx_jacobian(&lut, &single, 1e-5).unwrap();
        for k in 0..6 {
            assert!((ja[(0, k)] - expect[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn canonical_matches_approx_on_smooth_table() {
        let lut = poly_lut(17);
        let c = cloud(200, 0.6, 5);
        let a = global_feature(&lut, c.points()).unwrap();
        let jc = canonical_jacobian(&lut, &c, &a).unwrap();
        let ja = approx_jacobian(&lut, &c, 1e-6).unwrap();
        for ch in 0..9 {
            let n = jc.row(ch).iter().map(|v| v * v).sum::<f64>().sqrt();
            let d = jc.row(ch).iter().zip(ja.row(ch)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(d <= 1e-2 * n.max(1e-12), "channel {ch}: {:?} vs {:?}", jc.row(ch), ja.row(ch));
        }
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let lut = poly_lut(9);
        let c = cloud(64, 0.6, 6);
        for mode in [JacobianMode::Approx, JacobianMode::Canonical] {
            let cfg = RegistrationConfig {
                mode,
                ..Default::default()
            };
            let res = register(&lut, &c, &c, &cfg).unwrap();
            assert!(res.converged);
            assert_eq!(res.iterations, 1);
            assert_eq!(res.residual_norms.len(), res.iterations);
            assert!(log(&res.transform).norm() < 1e-6);
        }
    }

    #[test]
    fn recovers_small_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = crate::mlp::Mlp::he_uniform(&[3, 64, 128], crate::mlp::Activation::Relu, &mut rng).unwrap();
        let lut = crate::mlp::tabulate(&mlp, &Lattice3::unit(16).unwrap()).unwrap();
        let src = cloud(256, 0.5, 7);
        let truth = exp(&Twist([0.05, -0.03, 0.04, 0.02, -0.01, 0.03]));
        let tgt = transform_cloud(&truth, &src);
        for mode in [JacobianMode::Approx, JacobianMode::Canonical] {
            let cfg = RegistrationConfig {
                mode,
                ..Default::default()
            };
            let res = register(&lut, &src, &tgt, &cfg).unwrap();
            assert!(rotation_error_deg(&res.transform, &truth) < 1.0, "{mode}");
            assert!(translation_error(&res.transform, &truth) < 0.01, "{mode}");
            assert!(res.final_residual_norm <= res.residual_norms[0]);
        }
    }

    #[test]
    fn config_validation() {
        let lut = poly_lut(3);
        let c = cloud(4, 0.5, 8);
        let bad = RegistrationConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(register(&lut, &c, &c, &bad).is_err());
        let bad = RegistrationConfig {
            t: 0.0,
            ..Default::default()
        };
        assert!(register(&lut, &c, &c, &bad).is_err());
        assert!(approx_jacobian(&lut, &c, -1.0).is_err());
        assert_eq!("approx".parse::<JacobianMode>().unwrap(), JacobianMode::Approx);
        assert!("exact".parse::<JacobianMode>().is_err());
    }

    #[test]
    fn error_metrics() {
        let a = exp(&Twist([0.0, 0.0, 0.1, 1.0, 0.0, 0.0]));
        let b = exp(&Twist([0.0, 0.0, 0.1 + 1f64.to_radians(), 1.0, 0.0, 0.0]));
        assert!((rotation_error_deg(&a, &b) - 1.0).abs() < 1e-9);
        assert!(rotation_error_deg(&a, &a) < 1e-12);
        assert!((translation_error(&RigidTransform::translation([0.0, 3.0, 4.0]), &RigidTransform::identity()) - 5.0).abs() < 1e-15);
    }
}
