use neucolor_core::eval::{chamfer_distance, kabsch, KdTree};
use neucolor_core::geometry::{inverse_sigmoid, matrix_to_rot6d, rot6d_to_matrix, sigmoid, Mat3};
use neucolor_core::renderer::{density, render_weights};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-2.0f64..2.0)
}

proptest! {
    #[test]
    fn density_is_even(s in -50.0f64..50.0, alpha in 0.1f64..500.0) {
        prop_assert_eq!(density(s, alpha), density(-s, alpha));
    }

    #[test]
    fn density_scales_with_alpha(s in -5.0f64..5.0, alpha in 0.1f64..200.0) {
        let lhs = density(s, alpha);
        let rhs = alpha * density(alpha * s, 1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn weights_sum_to_opacity(
        sd in prop::collection::vec((0.0f64..50.0, 0.0f64..0.2), 1..64)
    ) {
        let (sigmas, deltas): (Vec<f64>, Vec<f64>) = sd.into_iter().unzip();
        let (w, total) = render_weights(&sigmas, &deltas);
        let depth: f64 = sigmas.iter().zip(&deltas).map(|(s, d)| s * d).sum();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((total - (1.0 - (-depth).exp())).abs() <= 1e-6);
    }

    #[test]
    fn sigmoid_round_trips(y in 1e-6f64..(1.0 - 1e-6)) {
        prop_assert!((sigmoid(inverse_sigmoid(y)) - y).abs() <= 1e-6);
    }

    #[test]
    fn rot6d_gives_a_rotation(r in prop::array::uniform6(-3.0f64..3.0)) {
        let Ok(m) = rot6d_to_matrix(&r) else { return Ok(()) };
        let err = (m.transpose() * m - Mat3::identity()).abs().max();
        prop_assert!(err <= 1e-7, "{}", err);
        prop_assert!((m.determinant() - 1.0).abs() <= 1e-7);
        // A rotation's own first two columns map back to it.
        let again = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
        prop_assert!((again - m).abs().max() <= 1e-12);
    }

    #[test]
    fn kd_tree_finds_the_nearest_point(
        pts in prop::collection::vec(point(), 1..300),
        q in point(),
    ) {
        let brute = pts
            .iter()
            .map(|p| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(KdTree::new(&pts).nearest(&q).1, brute);
    }

    #[test]
    fn chamfer_is_symmetric(
        a in prop::collection::vec(point(), 1..100),
        b in prop::collection::vec(point(), 1..100),
    ) {
        let ab = chamfer_distance(&a, &b).unwrap();
        let ba = chamfer_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn kabsch_recovers_a_known_motion(
        r in prop::array::uniform6(-1.0f64..1.0),
        t in point(),
        pts in prop::collection::vec(point(), 8..40),
    ) {
        let Ok(rot) = rot6d_to_matrix(&r) else { return Ok(()) };
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| {
                let v = rot * nalgebra::Vector3::from(*p);
                [v.x + t[0], v.y + t[1], v.z + t[2]]
            })
            .collect();
        let Ok(fit) = kabsch(&pts, &moved) else { return Ok(()) };
        for (p, m) in pts.iter().zip(&moved) {
            let q = fit.apply(p);
            for k in 0..3 {
                prop_assert!((q[k] - m[k]).abs() <= 1e-6);
            }
        }
    }
}
