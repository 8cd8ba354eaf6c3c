mod common;

use common::{frustum_oracle, random_scene};
use ppba_core::augment::{
    apply_policy, flip_y, frustum_dropout_traced, frustum_noise_traced, global_translate_noise, ground_truth_augment,
    random_dropout, random_flip, random_rotation, world_scaling, BandCombine, FrustumParams, GroundTruthDatabase,
    MAX_PASTED_BOXES,
};
use ppba_core::geom::{from_spherical, rotate_z, to_spherical, Point};
use ppba_core::rng::RandomStream;
use ppba_core::space::{default_space, sample_random};
use proptest::prelude::*;

fn scene_and_rng(seed: u64) -> (ppba_core::geom::PointScene, RandomStream) {
    let mut rng = RandomStream::from_seed(seed);
    let scene = random_scene(&mut rng, 300);
    (scene, rng)
}

fn params(rng: &mut RandomStream) -> FrustumParams {
    let combine = if rng.chance(0.5) { BandCombine::Union } else { BandCombine::Intersection };
    FrustumParams::new(
        rng.uniform_in(0.0, 0.4),
        rng.uniform_in(0.0, 1.3),
        rng.uniform_in(0.0, 50.0),
        combine,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn point_counts_follow_each_operation(seed in any::<u64>()) {
        let (scene, mut rng) = scene_and_rng(seed);
        let n = scene.points.len();
        prop_assert_eq!(random_flip(&scene, rng.uniform(), &mut rng).unwrap().points.len(), n);
        let lo = rng.uniform_in(0.5, 1.5);
        prop_assert_eq!(world_scaling(&scene, lo, lo.max(rng.uniform_in(0.5, 1.5)), &mut rng).unwrap().points.len(), n);
        prop_assert_eq!(global_translate_noise(&scene, [0.3, 0.1, 0.0], &mut rng).unwrap().points.len(), n);
        prop_assert_eq!(random_rotation(&scene, 0.7, &mut rng).unwrap().points.len(), n);
        let p = params(&mut rng);
        prop_assert_eq!(frustum_noise_traced(&scene, &p, 1.0, &mut rng).unwrap().0.points.len(), n);
        prop_assert!(frustum_dropout_traced(&scene, &p, rng.uniform(), &mut rng).unwrap().0.points.len() <= n);
        prop_assert!(random_dropout(&scene, rng.uniform(), &mut rng).unwrap().points.len() <= n);
        let db = GroundTruthDatabase::from_scenes([&random_scene(&mut rng, 300)]);
        let (pasted, outcome) = ground_truth_augment(&scene, &db, [1.0; 4], &mut rng).unwrap();
        prop_assert!(pasted.points.len() >= n);
        prop_assert!(outcome.pasted <= MAX_PASTED_BOXES);
    }

    #[test]
    fn zero_gates_leave_the_scene_bit_identical(seed in any::<u64>()) {
        let (scene, mut rng) = scene_and_rng(seed);
        let space = default_space();
        let mut policy = sample_random(&space, &mut rng);
        for v in policy.ops.values_mut() {
            v.prob = 0.0;
        }
        let db = GroundTruthDatabase::from_scenes([&scene]);
        let out = apply_policy(&scene, &policy, &db, &rng).unwrap();
        prop_assert!(out.scene.bit_eq(&scene));
        prop_assert!(out.fired.is_empty());
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>()) {
        let (scene, _) = scene_and_rng(seed);
        prop_assert!(flip_y(&flip_y(&scene)).bit_eq(&scene));
    }

    #[test]
    fn rotation_is_an_isometry(seed in any::<u64>(), angle in -std::f64::consts::PI..std::f64::consts::PI) {
        let (scene, _) = scene_and_rng(seed);
        let out = rotate_z(&scene, angle);
        for (a, b) in scene.points.iter().zip(&out.points) {
            prop_assert!((a.norm() - b.norm()).abs() < 1e-9);
            prop_assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
        for w in scene.points.windows(2).zip(out.points.windows(2)) {
            let d = |p: &Point, q: &Point| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
            prop_assert!((d(&w.0[0], &w.0[1]) - d(&w.1[0], &w.1[1])).abs() < 1e-9);
        }
        let back = rotate_z(&out, -angle);
        for (a, b) in scene.points.iter().zip(&back.points) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn spherical_round_trip(x in -100.0..100.0f64, y in -100.0..100.0f64, z in -100.0..100.0f64) {
        let p = Point::new(x, y, z);
        prop_assume!(p.norm() > 1e-6 && p.norm() <= 100.0);
        let q = from_spherical(&to_spherical(&p));
        prop_assert!(((q.x - x).powi(2) + (q.y - y).powi(2) + (q.z - z).powi(2)).sqrt() < 1e-9);
    }

    #[test]
    fn frustum_candidates_match_the_oracle(seed in any::<u64>()) {
        let (scene, mut rng) = scene_and_rng(seed);
        prop_assume!(!scene.points.is_empty());
        let p = params(&mut rng);
        let (out, trace) = frustum_dropout_traced(&scene, &p, 0.0, &mut rng).unwrap();
        let trace = trace.unwrap();
        let oracle = frustum_oracle(&scene.points, trace.anchor, p.theta_width, p.phi_width, p.distance, p.combine == BandCombine::Union);
        prop_assert_eq!(&trace.candidates, &oracle);
        let kept: Vec<Point> = scene.points.iter().zip(&oracle).filter(|(_, c)| !**c).map(|(p, _)| *p).collect();
        prop_assert_eq!(out.points.len(), kept.len());
        prop_assert!(out.points.iter().zip(&kept).all(|(a, b)| a.bit_eq(b)));
    }

    #[test]
    fn frustum_noise_moves_only_candidates_within_bounds(seed in any::<u64>(), max_noise in 0.0..1.0f64) {
        let (scene, mut rng) = scene_and_rng(seed);
        prop_assume!(!scene.points.is_empty());
        let p = params(&mut rng);
        let (out, trace) = frustum_noise_traced(&scene, &p, max_noise, &mut rng).unwrap();
        let trace = trace.unwrap();
        let oracle = frustum_oracle(&scene.points, trace.anchor, p.theta_width, p.phi_width, p.distance, p.combine == BandCombine::Union);
        for ((a, b), c) in scene.points.iter().zip(&out.points).zip(&oracle) {
            if *c {
                prop_assert!((a.x - b.x).abs() <= max_noise && (a.y - b.y).abs() <= max_noise && (a.z - b.z).abs() <= max_noise);
            } else {
                prop_assert!(a.bit_eq(b));
            }
        }
    }
}

#[test]
fn degenerate_band_drops_only_points_at_the_anchor_direction() {
    let pts = vec![
        Point::new(1.0, 1.0, 1.0),
        Point::new(2.0, 2.0, 2.0),
        Point::new(0.0, 0.0, 0.0),
        Point::new(1.0, 1.0, 1.5),
        Point::new(-1.0, 1.0, 1.0),
    ];
    let scene = ppba_core::geom::PointScene::new("d", pts.clone(), vec![]);
    let p = FrustumParams::new(0.0, 0.0, 0.0, BandCombine::Intersection);
    for seed in 0..20 {
        let mut rng = RandomStream::from_seed(seed);
        let (out, trace) = frustum_dropout_traced(&scene, &p, 0.0, &mut rng).unwrap();
        let a = trace.unwrap().anchor;
        let expected = frustum_oracle(&pts, a, 0.0, 0.0, 0.0, false);
        assert_eq!(out.points.len(), pts.len() - expected.iter().filter(|c| **c).count());
        if a == 0 || a == 1 {
            assert_eq!(expected, vec![true, true, false, false, false]);
        }
        if a == 2 {
            assert!(expected.iter().all(|c| !c));
        }
    }
}
