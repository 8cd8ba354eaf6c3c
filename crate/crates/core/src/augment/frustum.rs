//! Frustum selection in spherical coordinates around a randomly chosen
//! anchor point.

use serde::{Deserialize, Serialize};

use super::{invalid, AugmentError, OpKind};
use crate::geom::{angular_distance, to_spherical, Point, PointScene, SphericalCoord};
use crate::rng::RandomStream;
use crate::space::OpValues;

/// How the polar and azimuthal bands are combined. Encoded as
/// `union = 0`, `intersection = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandCombine {
    Union,
    Intersection,
}

impl BandCombine {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "union" => Some(BandCombine::Union),
            "intersection" => Some(BandCombine::Intersection),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrustumParams {
    pub theta_width: f64,
    pub phi_width: f64,
    /// Minimum range from the origin for a point to be affected, meters.
    pub distance: f64,
    pub combine: BandCombine,
}

impl FrustumParams {
    pub fn new(theta_width: f64, phi_width: f64, distance: f64, combine: BandCombine) -> Self {
        FrustumParams {
            theta_width,
            phi_width,
            distance,
            combine,
        }
    }

    pub(crate) fn validate(&self, op: OpKind) -> Result<(), AugmentError> {
        let check = |v: f64, hi: f64, name: &'static str| {
            if v.is_finite() && (0.0..=hi).contains(&v) {
                Ok(())
            } else {
                Err(invalid(op, name, format!("{v} outside [0, {hi}]")))
            }
        };
        check(self.theta_width, 0.4, "theta_width")?;
        check(self.phi_width, 1.3, "phi_width")?;
        check(self.distance, 50.0, "distance")
    }

    pub(crate) fn from_values(
        op: OpKind,
        values: &OpValues,
        combine_name: &'static str,
    ) -> Result<Self, AugmentError> {
        use crate::space::SpaceError;
        let real = |name: &'static str| {
            values.real(name).ok_or_else(|| SpaceError::MissingParam {
                op,
                param: name.to_string(),
            })
        };
        let combine_raw = values.choice(combine_name).ok_or_else(|| SpaceError::MissingParam {
            op,
            param: combine_name.to_string(),
        })?;
        let combine = BandCombine::from_name(combine_raw)
            .ok_or_else(|| invalid(op, combine_name, format!("`{combine_raw}` is not union or intersection")))?;
        let p = FrustumParams::new(real("theta_width")?, real("phi_width")?, real("distance")?, combine);
        p.validate(op)?;
        Ok(p)
    }

    fn contains(&self, anchor: &SphericalCoord, s: &SphericalCoord) -> bool {
        let in_theta = (s.theta - anchor.theta).abs() <= self.theta_width / 2.0;
        let in_phi = angular_distance(s.phi, anchor.phi) <= self.phi_width / 2.0;
        let in_band = match self.combine {
            BandCombine::Union => in_theta || in_phi,
            BandCombine::Intersection => in_theta && in_phi,
        };
        in_band && s.r > self.distance
    }
}

/// Membership mask of the frustum around `points[anchor]`.
pub fn frustum_candidates(points: &[Point], anchor: usize, params: &FrustumParams) -> Vec<bool> {
    let a = to_spherical(&points[anchor]);
    points
        .iter()
        .map(|p| params.contains(&a, &to_spherical(p)))
        .collect()
}

/// What a frustum operation selected: the anchor index and the candidate
/// mask over the input points. `None` for an empty scene.
#[derive(Clone, Debug, PartialEq)]
pub struct FrustumTrace {
    pub anchor: usize,
    pub candidates: Vec<bool>,
}

pub fn frustum_dropout(
    scene: &PointScene,
    params: &FrustumParams,
    keep_prob: f64,
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    frustum_dropout_traced(scene, params, keep_prob, rng).map(|(s, _)| s)
}

/// Drops frustum candidates, each kept independently with `keep_prob`.
pub fn frustum_dropout_traced(
    scene: &PointScene,
    params: &FrustumParams,
    keep_prob: f64,
    rng: &mut RandomStream,
) -> Result<(PointScene, Option<FrustumTrace>), AugmentError> {
    params.validate(OpKind::FrustumDropout)?;
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(invalid(OpKind::FrustumDropout, "keep_prob", format!("{keep_prob} outside [0, 1]")));
    }
    if scene.points.is_empty() {
        return Ok((scene.clone(), None));
    }
    let anchor = rng.index(scene.points.len());
    let candidates = frustum_candidates(&scene.points, anchor, params);
    let points = scene
        .points
        .iter()
        .zip(&candidates)
        .filter(|(_, &c)| !c || rng.chance(keep_prob))
        .map(|(p, _)| *p)
        .collect();
    let out = PointScene {
        scene_id: scene.scene_id.clone(),
        points,
        boxes: scene.boxes.clone(),
    };
    Ok((out, Some(FrustumTrace { anchor, candidates })))
}

pub fn frustum_noise(
    scene: &PointScene,
    params: &FrustumParams,
    max_noise: f64,
    rng: &mut RandomStream,
) -> Result<PointScene, AugmentError> {
    frustum_noise_traced(scene, params, max_noise, rng).map(|(s, _)| s)
}

/// Perturbs each frustum candidate by an independent uniform offset in
/// `[-max_noise, max_noise]` per Cartesian axis.
pub fn frustum_noise_traced(
    scene: &PointScene,
    params: &FrustumParams,
    max_noise: f64,
    rng: &mut RandomStream,
) -> Result<(PointScene, Option<FrustumTrace>), AugmentError> {
    params.validate(OpKind::FrustumNoise)?;
    if !(max_noise.is_finite() && (0.0..=1.0).contains(&max_noise)) {
        return Err(invalid(OpKind::FrustumNoise, "max_noise", format!("{max_noise} outside [0, 1]")));
    }
    if scene.points.is_empty() {
        return Ok((scene.clone(), None));
    }
    let anchor = rng.index(scene.points.len());
    let candidates = frustum_candidates(&scene.points, anchor, params);
    if max_noise == 0.0 {
        return Ok((scene.clone(), Some(FrustumTrace { anchor, candidates })));
    }
    let points = scene
        .points
        .iter()
        .zip(&candidates)
        .map(|(p, &c)| {
            if c {
                Point {
                    x: p.x + rng.uniform_in(-max_noise, max_noise),
                    y: p.y + rng.uniform_in(-max_noise, max_noise),
                    z: p.z + rng.uniform_in(-max_noise, max_noise),
                    intensity: p.intensity,
                }
            } else {
                *p
            }
        })
        .collect();
    let out = PointScene {
        scene_id: scene.scene_id.clone(),
        points,
        boxes: scene.boxes.clone(),
    };
    Ok((out, Some(FrustumTrace { anchor, candidates })))
}
