//! Property tests over the numeric invariants.

use proptest::prelude::*;
use sparseview_core::encoding::{frequency_mask, positional_encoding};
use sparseview_core::geometry::{closest_params, point_at, ray_min_distance, Ray, Vec3};
use sparseview_core::losses::geometry_loss;
use sparseview_core::renderer::{midpoint_samples, render};

fn vec3_strategy(range: f64) -> impl Strategy<Value = Vec3> {
    (
        -range..range,
        -range..range,
        -range..range,
    )
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn ray_strategy() -> impl Strategy<Value = Ray> {
    (vec3_strategy(2.0), vec3_strategy(1.0))
        .prop_filter("direction must not vanish", |(_, d)| d.norm() > 1e-3)
        .prop_map(|(o, d)| Ray::new(o, d))
}

proptest! {
    #[test]
    fn ray_distance_symmetric_nonnegative(r1 in ray_strategy(), r2 in ray_strategy()) {
        let d12 = ray_min_distance(&r1, &r2);
        let d21 = ray_min_distance(&r2, &r1);
        prop_assert!(d12 >= 0.0);
        prop_assert!((d12 - d21).abs() < 1e-9);
    }

    #[test]
    fn closest_segment_perpendicular(r1 in ray_strategy(), r2 in ray_strategy()) {
        let cp = closest_params(&r1, &r2);
        prop_assume!(!cp.degenerate);
        let seg = point_at(&r1, cp.m) - point_at(&r2, cp.n);
        prop_assert!(seg.dot(r1.direction).abs() < 1e-6);
        prop_assert!(seg.dot(r2.direction).abs() < 1e-6);
    }

    #[test]
    fn intersecting_rays_have_zero_distance(
        p in vec3_strategy(2.0),
        o1 in vec3_strategy(2.0),
        o2 in vec3_strategy(2.0),
    ) {
        prop_assume!((p - o1).norm() > 1e-2 && (p - o2).norm() > 1e-2);
        let r1 = Ray::new(o1, p - o1);
        let r2 = Ray::new(o2, p - o2);
        prop_assume!(!closest_params(&r1, &r2).degenerate);
        prop_assert!(ray_min_distance(&r1, &r2) < 1e-6);
    }

    #[test]
    fn mask_band_monotone_and_bounded(t in 0usize..=100, l in 1usize..=24) {
        let m = frequency_mask(t, 100, l);
        prop_assert_eq!(m.values.len(), l);
        for w in m.values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        for v in &m.values {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn mask_full_bands_persist(t in 0usize..100, l in 1usize..=24) {
        let now = frequency_mask(t, 100, l);
        let next = frequency_mask(t + 1, 100, l);
        for i in 0..l {
            if now.values[i] == 1.0 {
                prop_assert_eq!(next.values[i], 1.0);
            }
        }
    }

    #[test]
    fn encoding_length_contract(x in vec3_strategy(4.0), l in 1usize..=12, ident in any::<bool>()) {
        let enc = positional_encoding(x, l, ident);
        prop_assert_eq!(enc.len(), (if ident { 3 } else { 0 }) + 6 * l);
        for v in &enc {
            prop_assert!(v.is_finite());
        }
    }

    #[test]
    fn render_weights_bounded(
        sigmas in proptest::collection::vec(0.0f64..200.0, 1..32),
    ) {
        let n = sigmas.len();
        let samples = midpoint_samples(0.5, 4.0, n).unwrap();
        let colors = vec![Vec3::splat(0.5); n];
        let out = render(&sigmas, &colors, &samples).unwrap();
        let sum: f64 = out.weights.iter().sum();
        prop_assert!(sum <= 1.0 + 1e-6);
        prop_assert_eq!(out.transmittance[0], 1.0);
        for w in out.transmittance.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        for w in &out.weights {
            prop_assert!((0.0..=1.0 + 1e-9).contains(w));
        }
    }

    #[test]
    fn geometry_loss_confidence_scale_invariant(
        pts in proptest::collection::vec((vec3_strategy(3.0), vec3_strategy(3.0), 0.05f64..1.0), 1..12),
        scale in 0.01f64..100.0,
    ) {
        let p_t: Vec<Vec3> = pts.iter().map(|(a, _, _)| *a).collect();
        let p_r: Vec<Vec3> = pts.iter().map(|(_, b, _)| *b).collect();
        let eps: Vec<f64> = pts.iter().map(|(_, _, e)| *e).collect();
        let scaled: Vec<f64> = eps.iter().map(|e| e * scale).collect();
        let a = geometry_loss(&p_t, &p_r, &eps).unwrap().value;
        let b = geometry_loss(&p_t, &p_r, &scaled).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}
