use std::f64::consts::FRAC_PI_4;

use rand_distr::{Distribution, StandardNormal};

use super::{invalid, AugmentError, OpKind};
use crate::geom::{normalize_heading, rotate_z, Box3D, Point, PointScene};
use crate::rng::RandomStream;

/// Mirrors the scene across the x-z plane (y → −y).
pub fn flip_y(scene: &PointScene) -> PointScene {
    PointScene {
        scene_id: scene.scene_id.clone(),
        points: scene
            .points
            .iter()
            .map(|p| Point { y: -p.y, ..*p })
            .collect(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| Box3D {
                center_y: -b.center_y,
                heading: normalize_heading(-b.heading),
                ..*b
            })
            .collect(),
    }
}

/// Flips the scene with probability `flip_prob` (one draw).
pub fn random_flip(
    scene: &PointScene,
    flip_prob: f64,
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(invalid(OpKind::RandomFlip, "flip_prob", format!("{flip_prob} outside [0, 1]")));
    }
    Ok(if rng.chance(flip_prob) {
        flip_y(scene)
    } else {
        scene.clone()
    })
}

/// Multiplies coordinates, box centers and box dimensions by `s`.
pub fn scale_scene(scene: &PointScene, s: f64) -> PointScene {
    if s == 1.0 {
        return scene.clone();
    }
    PointScene {
        scene_id: scene.scene_id.clone(),
        points: scene
            .points
            .iter()
            .map(|p| Point {
                x: p.x * s,
                y: p.y * s,
                z: p.z * s,
                intensity: p.intensity,
            })
            .collect(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| Box3D {
                center_x: b.center_x * s,
                center_y: b.center_y * s,
                center_z: b.center_z * s,
                length: b.length * s,
                width: b.width * s,
                height: b.height * s,
                ..*b
            })
            .collect(),
    }
}

pub fn world_scaling(
    scene: &PointScene,
    lo: f64,
    hi: f64,
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    if !(0.5 <= lo && lo <= hi && hi <= 1.5) {
        return Err(invalid(
            OpKind::WorldScaling,
            "scaling_range",
            format!("need 0.5 <= lo <= hi <= 1.5, got [{lo}, {hi}]"),
        ));
    }
    let s = rng.uniform_in(lo, hi);
    Ok(scale_scene(scene, s))
}

pub fn translate_scene(scene: &PointScene, offset: [f64; 3]) -> PointScene {
    if offset.iter().all(|o| *o == 0.0) {
        return scene.clone();
    }
    let [dx, dy, dz] = offset;
    PointScene {
        scene_id: scene.scene_id.clone(),
        points: scene
            .points
            .iter()
            .map(|p| Point {
                x: p.x + dx,
                y: p.y + dy,
                z: p.z + dz,
                intensity: p.intensity,
            })
            .collect(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| Box3D {
                center_x: b.center_x + dx,
                center_y: b.center_y + dy,
                center_z: b.center_z + dz,
                ..*b
            })
            .collect(),
    }
}

/// One Gaussian offset per scene, axis `i` with standard deviation `std[i]`.
/// Always consumes three normal draws.
pub fn global_translate_noise(
    scene: &PointScene,
    std: [f64; 3],
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    const NAMES: [&str; 3] = ["std_x", "std_y", "std_z"];
    for (s, name) in std.iter().zip(NAMES) {
        if !(s.is_finite() && (0.0..=0.3).contains(s)) {
            return Err(invalid(OpKind::GlobalTranslateNoise, name, format!("{s} outside [0, 0.3]")));
        }
    }
    let mut offset = [0.0; 3];
    for (o, s) in offset.iter_mut().zip(std) {
        let z: f64 = StandardNormal.sample(rng);
        *o = if s == 0.0 { 0.0 } else { s * z };
    }
    Ok(translate_scene(scene, offset))
}

pub fn random_rotation(
    scene: &PointScene,
    max_angle: f64,
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    if !(0.0..=FRAC_PI_4).contains(&max_angle) {
        return Err(invalid(
            OpKind::RandomRotation,
            "max_angle",
            format!("{max_angle} outside [0, pi/4]"),
        ));
    }
    let angle = rng.uniform_in(-max_angle, max_angle);
    Ok(rotate_z(scene, angle))
}

/// Drops each point independently with probability `dropout_prob`.
pub fn random_dropout(
    scene: &PointScene,
    dropout_prob: f64,
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    if !(0.0..=1.0).contains(&dropout_prob) {
        return Err(invalid(
            OpKind::RandomDropout,
            "dropout_prob",
            format!("{dropout_prob} outside [0, 1]"),
        ));
    }
    let points = scene
        .points
        .iter()
        .filter(|_| !rng.chance(dropout_prob))
        .copied()
        .collect();
    Ok(PointScene {
        scene_id: scene.scene_id.clone(),
        points,
        boxes: scene.boxes.clone(),
    })
}
