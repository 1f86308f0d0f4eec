use luti_core::dataio::{format_xyz, lut_from_bytes, lut_to_bytes, normalize, parse_xyz};
use luti_core::embed::global_feature;
use luti_core::lattice::{Lattice3, Lut};
use luti_core::se3::{exp, log, Twist};
use luti_core::training::tv_regularizer;
use luti_core::PointCloud;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0)
}

fn table(d: usize, k: usize) -> impl Strategy<Value = Lut> {
    prop::collection::vec(-10.0f32..10.0, d * d * d * k)
        .prop_map(move |data| Lut::new(Lattice3::unit(d).unwrap(), k, data).unwrap())
}

fn twist(max_angle: f64) -> impl Strategy<Value = Twist> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0..max_angle, prop::array::uniform3(-2.0f64..2.0)).prop_map(
        |(axis, angle, v)| {
            let n = axis.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-9);
            let w = axis.map(|a| a / n * angle);
            Twist([w[0], w[1], w[2], v[0], v[1], v[2]])
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_inverts_exp(xi in twist(3.0)) {
        let back = log(&exp(&xi));
        for (a, b) in back.0.iter().zip(&xi.0) {
            prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", back, xi);
        }
    }

    #[test]
    fn exp_of_negated_twist_is_inverse(xi in twist(3.0), p in point()) {
        let q = exp(&-xi).apply(exp(&xi).apply(p));
        for (a, b) in q.iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolant_stays_within_corner_range(lut in table(3, 2), p in point()) {
        let q = lut.locate(p).unwrap();
        let v = lut.interpolate(&q);
        for (ch, value) in v.iter().enumerate() {
            let corners: Vec<f64> = q.corners.iter().map(|&n| lut.node(n)[ch] as f64).collect();
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*value >= lo - 1e-12 && *value <= hi + 1e-12);
        }
    }

    #[test]
    fn global_feature_ignores_point_order(lut in table(4, 3), pts in prop::collection::vec(point(), 1..40), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..pts.len()).collect();
        let n = order.len();
        for i in (1..n).rev() {
            order.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let cloud = PointCloud::new(pts).unwrap();
        let shuffled = cloud.permuted(&order).unwrap();
        let a = global_feature(&lut, cloud.points()).unwrap();
        let b = global_feature(&lut, shuffled.points()).unwrap();
        prop_assert_eq!(a.values, b.values);
    }

    #[test]
    fn normalize_is_idempotent(pts in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..30)) {
        let c = PointCloud::new(pts).unwrap();
        if let Ok(once) = normalize(&c) {
            prop_assert!((once.max_abs() - 1.0).abs() < 1e-12);
            let twice = normalize(&once).unwrap();
            for (a, b) in once.points().iter().zip(twice.points()) {
                for i in 0..3 {
                    prop_assert!((a[i] - b[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tv_ignores_global_shift(lut in table(3, 2), shift in -4.0f32..4.0, p in 1u32..=2) {
        let shifted = Lut::new(*lut.lattice(), 2, lut.data().iter().map(|v| v + shift).collect()).unwrap();
        let (a, b) = (tv_regularizer(&lut, p).unwrap(), tv_regularizer(&shifted, p).unwrap());
        // shifting in f32 perturbs each difference by at most a few ulps of 14
        prop_assert!((a - b).abs() <= 1e-4 * a.max(1.0));
    }

    #[test]
    fn table_bytes_roundtrip(lut in table(3, 3)) {
        let back = lut_from_bytes(&lut_to_bytes(&lut).unwrap()).unwrap();
        prop_assert_eq!(back, lut);
    }

    #[test]
    fn xyz_text_roundtrip(pts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..20)) {
        let c = PointCloud::new(pts).unwrap();
        let back = parse_xyz(&format_xyz(&c)).unwrap();
        prop_assert_eq!(back.points(), c.points());
    }
}
