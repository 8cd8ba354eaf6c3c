#![allow(dead_code)]

use std::f64::consts::PI;

use ppba_core::geom::{Box3D, ClassLabel, Point, PointScene};
use ppba_core::rng::RandomStream;

/// A scene of up to `max_points` points spread over a LiDAR-like range,
/// with a few boxes. Some points repeat exactly and one may sit at the
/// origin.
pub fn random_scene(rng: &mut RandomStream, max_points: usize) -> PointScene {
    let n = rng.index(max_points + 1);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let p = match rng.index(20) {
            0 if !points.is_empty() => points[rng.index(points.len())],
            1 => Point::new(0.0, 0.0, 0.0),
            _ => {
                let r = rng.uniform_in(0.5, 70.0);
                let az = rng.uniform_in(-PI, PI);
                let z = rng.uniform_in(-3.0, 3.0);
                Point::new(r * az.cos(), r * az.sin(), z).with_intensity(rng.uniform())
            }
        };
        points.push(p);
    }
    let boxes = (0..rng.index(5))
        .map(|_| {
            Box3D::new(
                [rng.uniform_in(-40.0, 40.0), rng.uniform_in(-40.0, 40.0), rng.uniform_in(-2.0, 1.0)],
                [rng.uniform_in(0.5, 5.0), rng.uniform_in(0.5, 2.5), rng.uniform_in(1.0, 2.5)],
                rng.uniform_in(-PI, PI),
                ClassLabel::ALL[rng.index(4)],
            )
            .unwrap()
        })
        .collect();
    PointScene::new("random", points, boxes)
}

/// Spherical coordinates computed from the defining formulas.
pub fn spherical(p: &Point) -> (f64, f64, f64) {
    let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    let theta = if r > 0.0 { (p.z / r).acos() } else { 0.0 };
    (r, theta, p.y.atan2(p.x))
}

/// Brute-force frustum membership of every point around `points[anchor]`.
pub fn frustum_oracle(points: &[Point], anchor: usize, theta_w: f64, phi_w: f64, distance: f64, union: bool) -> Vec<bool> {
    let (_, at, ap) = spherical(&points[anchor]);
    points
        .iter()
        .map(|p| {
            let (r, t, ph) = spherical(p);
            let in_theta = (t - at).abs() <= theta_w / 2.0;
            let mut d = (ph - ap).abs() % (2.0 * PI);
            if d > PI {
                d = 2.0 * PI - d;
            }
            let in_phi = d <= phi_w / 2.0;
            let band = if union { in_theta || in_phi } else { in_theta && in_phi };
            band && r > distance
        })
        .collect()
}
