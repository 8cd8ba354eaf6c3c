//! Point-cloud augmentation operations and the fixed-order policy executor.
//!
//! Every operation is a pure function of its input scene, its parameters and
//! a [`RandomStream`]. The executor gives each operation its own child
//! stream and draws all eight application gates from a separate stream, so
//! whether one operation fires never shifts the draws seen by another.

mod frustum;
mod gt_database;
mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::PointScene;
use crate::rng::RandomStream;
use crate::space::{OpValues, PolicyAssignment, SpaceError};

pub use frustum::{
    frustum_candidates, frustum_dropout, frustum_dropout_traced, frustum_noise,
    frustum_noise_traced, BandCombine, FrustumParams, FrustumTrace,
};
pub use gt_database::{ground_truth_augment, GroundTruthDatabase, GtEntry, GtOutcome, MAX_PASTED_BOXES};
pub use ops::{
    flip_y, global_translate_noise, random_dropout, random_flip, random_rotation, scale_scene,
    translate_scene, world_scaling,
};

/// The eight operations, declared in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    GroundTruthAugmentor,
    RandomFlip,
    WorldScaling,
    GlobalTranslateNoise,
    FrustumDropout,
    FrustumNoise,
    RandomRotation,
    /// Also known as RandomDropLaserPoints.
    RandomDropout,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::GroundTruthAugmentor,
        OpKind::RandomFlip,
        OpKind::WorldScaling,
        OpKind::GlobalTranslateNoise,
        OpKind::FrustumDropout,
        OpKind::FrustumNoise,
        OpKind::RandomRotation,
        OpKind::RandomDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::GroundTruthAugmentor => "GroundTruthAugmentor",
            OpKind::RandomFlip => "RandomFlip",
            OpKind::WorldScaling => "WorldScaling",
            OpKind::GlobalTranslateNoise => "GlobalTranslateNoise",
            OpKind::FrustumDropout => "FrustumDropout",
            OpKind::FrustumNoise => "FrustumNoise",
            OpKind::RandomRotation => "RandomRotation",
            OpKind::RandomDropout => "RandomDropout",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "RandomDropLaserPoints" {
            return Ok(OpKind::RandomDropout);
        }
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("{op}.{param}: {reason}")]
    InvalidParam {
        op: OpKind,
        param: &'static str,
        reason: String,
    },
    #[error(transparent)]
    Policy(#[from] SpaceError),
}

pub(crate) fn invalid(op: OpKind, param: &'static str, reason: impl Into<String>) -> AugmentError {
    AugmentError::InvalidParam {
        op,
        param,
        reason: reason.into(),
    }
}

/// Typed view of a [`PolicyAssignment`], checked against each operation's
/// preconditions.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPolicy {
    pub gates: [f64; 8],
    pub class_probs: [f64; 4],
    pub scale_range: (f64, f64),
    pub translate_std: [f64; 3],
    pub dropout_frustum: FrustumParams,
    pub keep_prob: f64,
    pub noise_frustum: FrustumParams,
    pub max_noise: f64,
    pub max_angle: f64,
    pub dropout_prob: f64,
}

/// Maps the single searchable scaling value onto the sampling interval:
/// `[min(v, 1), max(v, 1)]`, so `v = 1` is the identity.
pub fn scaling_interval(value: f64) -> (f64, f64) {
    (value.min(1.0), value.max(1.0))
}

impl ResolvedPolicy {
    pub fn resolve(policy: &PolicyAssignment) -> Result<Self, AugmentError> {
        let get = |k: OpKind| policy.get(k).ok_or(SpaceError::MissingOp(k));
        let real = |k: OpKind, v: &OpValues, name: &'static str| -> Result<f64, AugmentError> {
            let x = v.real(name).ok_or_else(|| SpaceError::MissingParam {
                op: k,
                param: name.to_string(),
            })?;
            if !x.is_finite() {
                return Err(invalid(k, name, "must be finite"));
            }
            Ok(x)
        };
        let unit = |k: OpKind, v: &OpValues, name: &'static str| -> Result<f64, AugmentError> {
            let x = real(k, v, name)?;
            if !(0.0..=1.0).contains(&x) {
                return Err(invalid(k, name, format!("{x} outside [0, 1]")));
            }
            Ok(x)
        };
        let mut gates = [0.0; 8];
        for (i, k) in OpKind::ALL.iter().enumerate() {
            let p = get(*k)?.prob;
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(*k, "prob", format!("{p} outside [0, 1]")));
            }
            gates[i] = p;
        }

        let gt = get(OpKind::GroundTruthAugmentor)?;
        let class_probs = [
            unit(OpKind::GroundTruthAugmentor, gt, "vehicle_prob")?,
            unit(OpKind::GroundTruthAugmentor, gt, "pedestrian_prob")?,
            unit(OpKind::GroundTruthAugmentor, gt, "cyclist_prob")?,
            unit(OpKind::GroundTruthAugmentor, gt, "other_prob")?,
        ];

        let ws = get(OpKind::WorldScaling)?;
        let s = real(OpKind::WorldScaling, ws, "scaling_range")?;
        if !(0.5..=1.5).contains(&s) {
            return Err(invalid(OpKind::WorldScaling, "scaling_range", format!("{s} outside [0.5, 1.5]")));
        }

        let tn = get(OpKind::GlobalTranslateNoise)?;
        let translate_std = [
            real(OpKind::GlobalTranslateNoise, tn, "std_x")?,
            real(OpKind::GlobalTranslateNoise, tn, "std_y")?,
            real(OpKind::GlobalTranslateNoise, tn, "std_z")?,
        ];

        let fd = get(OpKind::FrustumDropout)?;
        let dropout_frustum = FrustumParams::from_values(OpKind::FrustumDropout, fd, "drop_type")?;
        let keep_prob = unit(OpKind::FrustumDropout, fd, "keep_prob")?;

        let fnz = get(OpKind::FrustumNoise)?;
        let noise_frustum = FrustumParams::from_values(OpKind::FrustumNoise, fnz, "noise_type")?;
        let max_noise = real(OpKind::FrustumNoise, fnz, "max_noise")?;

        let rot = get(OpKind::RandomRotation)?;
        let max_angle = real(OpKind::RandomRotation, rot, "max_angle")?;

        let rd = get(OpKind::RandomDropout)?;
        let dropout_prob = unit(OpKind::RandomDropout, rd, "dropout_prob")?;

        Ok(ResolvedPolicy {
            gates,
            class_probs,
            scale_range: scaling_interval(s),
            translate_std,
            dropout_frustum,
            keep_prob,
            noise_frustum,
            max_noise,
            max_angle,
            dropout_prob,
        })
    }
}

/// Result of running a policy over one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentOutcome {
    pub scene: PointScene,
    /// Operations whose gate passed, in execution order.
    pub fired: Vec<OpKind>,
    pub pasted_boxes: usize,
    pub warnings: Vec<String>,
}

/// Applies all eight operations in the fixed order, each gated by one draw
/// against its application probability.
pub fn apply_policy(
    scene: &PointScene,
    policy: &PolicyAssignment,
    db: &GroundTruthDatabase,
    rng: &RandomStream,
) -> Result<AugmentOutcome, AugmentError> {
    let resolved = ResolvedPolicy::resolve(policy)?;
    apply_resolved(scene, &resolved, db, rng)
}

pub fn apply_resolved(
    scene: &PointScene,
    policy: &ResolvedPolicy,
    db: &GroundTruthDatabase,
    rng: &RandomStream,
) -> Result<AugmentOutcome, AugmentError> {
    let mut gate_rng = rng.child("gate");
    let mut current = scene.clone();
    let mut fired = Vec::new();
    let mut pasted_boxes = 0;
    let mut warnings = Vec::new();
    for (i, &op) in OpKind::ALL.iter().enumerate() {
        let open = gate_rng.chance(policy.gates[i]);
        if !open {
            continue;
        }
        fired.push(op);
        let mut op_rng = rng.child(op.name());
        current = match op {
            OpKind::GroundTruthAugmentor => {
                let (s, outcome) = ground_truth_augment(&current, db, policy.class_probs, &mut op_rng)?;
                pasted_boxes += outcome.pasted;
                warnings.extend(outcome.warnings);
                s
            }
            // The gate already carried the flip probability.
            OpKind::RandomFlip => flip_y(&current),
            OpKind::WorldScaling => {
                let (lo, hi) = policy.scale_range;
                world_scaling(&current, lo, hi, &mut op_rng)?
            }
            OpKind::GlobalTranslateNoise => global_translate_noise(&current, policy.translate_std, &mut op_rng)?,
            OpKind::FrustumDropout => {
                frustum_dropout(&current, &policy.dropout_frustum, policy.keep_prob, &mut op_rng)?
            }
            OpKind::FrustumNoise => frustum_noise(&current, &policy.noise_frustum, policy.max_noise, &mut op_rng)?,
            OpKind::RandomRotation => random_rotation(&current, policy.max_angle, &mut op_rng)?,
            OpKind::RandomDropout => random_dropout(&current, policy.dropout_prob, &mut op_rng)?,
        };
    }
    Ok(AugmentOutcome {
        scene: current,
        fired,
        pasted_boxes,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Box3D, ClassLabel, Point};
    use crate::space::{default_space, sample_random, ParamValue};

    fn scene() -> PointScene {
        let mut rng = RandomStream::from_seed(11);
        let points = (0..500)
            .map(|_| {
                Point::new(
                    rng.uniform_in(-30.0, 30.0),
                    rng.uniform_in(-30.0, 30.0),
                    rng.uniform_in(-2.0, 3.0),
                )
                .with_intensity(rng.uniform())
            })
            .collect();
        let boxes = vec![Box3D::new([5.0, 5.0, 0.0], [4.0, 2.0, 1.5], 0.4, ClassLabel::Vehicle).unwrap()];
        PointScene::new("s0", points, boxes)
    }

    fn db() -> GroundTruthDatabase {
        let b = Box3D::new([-10.0, 12.0, 0.0], [1.0, 1.0, 1.8], 0.0, ClassLabel::Pedestrian).unwrap();
        GroundTruthDatabase::new(vec![GtEntry {
            bbox: b,
            local_points: vec![Point::new(0.1, 0.1, 0.2), Point::new(-0.2, 0.3, -0.5)],
        }])
        .unwrap()
    }

    #[test]
    fn op_names_round_trip() {
        for k in OpKind::ALL {
            assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
        }
        assert_eq!("RandomDropLaserPoints".parse::<OpKind>().unwrap(), OpKind::RandomDropout);
        assert!("Nope".parse::<OpKind>().is_err());
    }

    #[test]
    fn zero_gates_are_identity() {
        let space = default_space();
        let mut rng = RandomStream::from_seed(2);
        let mut policy = sample_random(&space, &mut rng);
        for v in policy.ops.values_mut() {
            v.prob = 0.0;
        }
        let s = scene();
        let out = apply_policy(&s, &policy, &db(), &RandomStream::from_seed(3)).unwrap();
        assert!(out.scene.bit_eq(&s));
        assert!(out.fired.is_empty());
    }

    #[test]
    fn open_gates_with_identity_magnitudes_are_identity() {
        let space = default_space();
        let mut policy = space.identity_policy();
        for (k, v) in policy.ops.iter_mut() {
            // RandomFlip's probability is its magnitude as well.
            v.prob = if *k == OpKind::RandomFlip { 0.0 } else { 1.0 };
        }
        let s = scene();
        let out = apply_policy(&s, &policy, &db(), &RandomStream::from_seed(4)).unwrap();
        assert!(out.scene.bit_eq(&s));
        assert_eq!(out.fired.len(), 7);
        assert_eq!(out.pasted_boxes, 0);
    }

    #[test]
    fn deterministic_given_stream() {
        let space = default_space();
        let policy = sample_random(&space, &mut RandomStream::from_seed(5));
        let s = scene();
        let a = apply_policy(&s, &policy, &db(), &RandomStream::from_seed(6)).unwrap();
        let b = apply_policy(&s, &policy, &db(), &RandomStream::from_seed(6)).unwrap();
        assert!(a.scene.bit_eq(&b.scene));
    }

    #[test]
    fn incomplete_policy_names_missing_parameter() {
        let space = default_space();
        let mut policy = space.identity_policy();
        policy
            .ops
            .get_mut(&OpKind::GlobalTranslateNoise)
            .unwrap()
            .params
            .remove("std_y");
        let err = apply_policy(&scene(), &policy, &db(), &RandomStream::from_seed(0)).unwrap_err();
        assert!(err.to_string().contains("std_y"), "{err}");
        policy.ops.remove(&OpKind::RandomDropout);
        let err = apply_policy(&scene(), &policy, &db(), &RandomStream::from_seed(0)).unwrap_err();
        assert!(err.to_string().contains("RandomDropout"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_values() {
        let space = default_space();
        let mut policy = space.identity_policy();
        policy
            .ops
            .get_mut(&OpKind::WorldScaling)
            .unwrap()
            .params
            .insert("scaling_range".into(), ParamValue::Real(1.7));
        assert!(matches!(
            apply_policy(&scene(), &policy, &db(), &RandomStream::from_seed(0)),
            Err(AugmentError::InvalidParam { op: OpKind::WorldScaling, .. })
        ));
    }

    #[test]
    fn scaling_interval_brackets_one() {
        assert_eq!(scaling_interval(1.0), (1.0, 1.0));
        assert_eq!(scaling_interval(0.5), (0.5, 1.0));
        assert_eq!(scaling_interval(1.3), (1.0, 1.3));
    }
}
