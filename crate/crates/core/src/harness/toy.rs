//! A small classification task on synthetic single-object scenes.
//!
//! Training scenes show each object at heading zero; validation scenes are
//! rotated about the sensor, so augmentation that rotates training scenes
//! helps. The classifier is nearest-centroid over a histogram of the points
//! around the labeled box, in world axes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_resolved, AugmentError, AugmentOutcome, GroundTruthDatabase, ResolvedPolicy};
use crate::engine::Schedule;
use crate::geom::{rotate_z, Box3D, ClassLabel, Point, PointScene};
use crate::protocol::{InProcessTrainer, Model, TrainerError};
use crate::rng::{RandomStream, StreamId};
use crate::space::{PolicyAssignment, SearchSpace};

const GRID: usize = 8;
const GRID_HALF_EXTENT: f64 = 3.2;
const HEIGHT_BINS: usize = 4;
const HEIGHT_MAX: f64 = 2.0;
pub const FEATURE_BINS: usize = GRID * GRID + HEIGHT_BINS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTaskSpec {
    pub seed: u64,
    #[serde(default = "defaults::train_scenes")]
    pub train_scenes: usize,
    #[serde(default = "defaults::val_scenes")]
    pub val_scenes: usize,
    #[serde(default = "defaults::points_per_object")]
    pub points_per_object: usize,
    #[serde(default = "defaults::clutter_points")]
    pub clutter_points: usize,
    /// Relative box-size jitter.
    #[serde(default = "defaults::size_jitter")]
    pub size_jitter: f64,
    /// Gaussian-ish point jitter in meters.
    #[serde(default = "defaults::point_noise")]
    pub point_noise: f64,
    /// Validation scenes are rotated uniformly within this many radians.
    #[serde(default = "defaults::val_rotation")]
    pub val_rotation: f64,
    /// Scenes consumed per training step.
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    #[serde(default)]
    pub space: SearchSpace,
}

mod defaults {
    pub fn train_scenes() -> usize {
        160
    }
    pub fn val_scenes() -> usize {
        200
    }
    pub fn points_per_object() -> usize {
        48
    }
    pub fn clutter_points() -> usize {
        24
    }
    pub fn size_jitter() -> f64 {
        0.15
    }
    pub fn point_noise() -> f64 {
        0.05
    }
    pub fn val_rotation() -> f64 {
        std::f64::consts::FRAC_PI_4
    }
    pub fn batch() -> usize {
        4
    }
}

impl ToyTaskSpec {
    pub fn new(seed: u64) -> Self {
        ToyTaskSpec {
            seed,
            train_scenes: defaults::train_scenes(),
            val_scenes: defaults::val_scenes(),
            points_per_object: defaults::points_per_object(),
            clutter_points: defaults::clutter_points(),
            size_jitter: defaults::size_jitter(),
            point_noise: defaults::point_noise(),
            val_rotation: defaults::val_rotation(),
            batch: defaults::batch(),
            space: SearchSpace::default(),
        }
    }
}

fn class_dims(class: ClassLabel) -> [f64; 3] {
    match class {
        ClassLabel::Vehicle => [4.2, 1.8, 1.5],
        ClassLabel::Pedestrian => [0.8, 0.7, 1.8],
        ClassLabel::Cyclist => [1.8, 0.7, 1.7],
        ClassLabel::Other => [2.0, 1.6, 0.9],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Deterministic scenes for one split.
pub fn generate_scenes(spec: &ToyTaskSpec, split: Split) -> Vec<PointScene> {
    let (name, count) = match split {
        Split::Train => ("train", spec.train_scenes),
        Split::Val => ("val", spec.val_scenes),
    };
    let base = StreamId::root(spec.seed).child("toy").child(name);
    (0..count)
        .map(|i| {
            let mut rng = base.indexed("scene", i).stream();
            let scene = one_scene(spec, &format!("{name}-{i}"), &mut rng);
            match split {
                Split::Train => scene,
                Split::Val => {
                    let a = rng.uniform_in(-spec.val_rotation, spec.val_rotation);
                    rotate_z(&scene, a)
                }
            }
        })
        .collect()
}

fn one_scene(spec: &ToyTaskSpec, id: &str, rng: &mut RandomStream) -> PointScene {
    let class = ClassLabel::ALL[rng.index(ClassLabel::ALL.len())];
    let [l, w, h] = class_dims(class);
    let j = spec.size_jitter;
    let dims = [
        l * rng.uniform_in(1.0 - j, 1.0 + j),
        w * rng.uniform_in(1.0 - j, 1.0 + j),
        h * rng.uniform_in(1.0 - j, 1.0 + j),
    ];
    let cx = rng.uniform_in(8.0, 14.0);
    let cy = rng.uniform_in(-3.0, 3.0);
    let bbox = Box3D::new([cx, cy, dims[2] / 2.0], dims, 0.0, class).expect("positive dims");
    let mut points = Vec::with_capacity(spec.points_per_object + spec.clutter_points);
    for _ in 0..spec.points_per_object {
        let n = spec.point_noise;
        let local = Point::new(
            rng.uniform_in(-0.5, 0.5) * dims[0] + rng.uniform_in(-n, n),
            rng.uniform_in(-0.5, 0.5) * dims[1] + rng.uniform_in(-n, n),
            rng.uniform_in(-0.5, 0.5) * dims[2] + rng.uniform_in(-n, n),
        )
        .with_intensity(rng.uniform());
        points.push(bbox.to_world(&local));
    }
    for _ in 0..spec.clutter_points {
        points.push(
            Point::new(
                cx + rng.uniform_in(-6.0, 6.0),
                cy + rng.uniform_in(-6.0, 6.0),
                rng.uniform_in(0.0, 0.2),
            )
            .with_intensity(rng.uniform()),
        );
    }
    PointScene::new(id, points, vec![bbox])
}

/// Normalized histogram of the points around the scene's first box: an
/// `8 x 8` bird's-eye grid in world axes plus height bins.
pub fn scene_features(scene: &PointScene) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_BINS];
    let Some(b) = scene.boxes.first() else {
        return f;
    };
    let cell = 2.0 * GRID_HALF_EXTENT / GRID as f64;
    let mut n = 0usize;
    for p in &scene.points {
        let dx = p.x - b.center_x;
        let dy = p.y - b.center_y;
        if dx.abs() >= GRID_HALF_EXTENT || dy.abs() >= GRID_HALF_EXTENT {
            continue;
        }
        let gx = (((dx + GRID_HALF_EXTENT) / cell) as usize).min(GRID - 1);
        let gy = (((dy + GRID_HALF_EXTENT) / cell) as usize).min(GRID - 1);
        f[gx * GRID + gy] += 1.0;
        let hz = ((p.z.max(0.0) / HEIGHT_MAX * HEIGHT_BINS as f64) as usize).min(HEIGHT_BINS - 1);
        f[GRID * GRID + hz] += 1.0;
        n += 1;
    }
    if n > 0 {
        for v in &mut f {
            *v /= n as f64;
        }
    }
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyState {
    pub step: u64,
    pub sums: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
}

struct ToyData {
    train: Vec<PointScene>,
    val: Vec<(Vec<f64>, usize)>,
    db: GroundTruthDatabase,
}

#[derive(Clone)]
pub struct ToyModel {
    spec: ToyTaskSpec,
    data: Arc<ToyData>,
}

impl ToyModel {
    pub fn new(spec: ToyTaskSpec) -> Self {
        let train = generate_scenes(&spec, Split::Train);
        let val = generate_scenes(&spec, Split::Val)
            .iter()
            .map(|s| (scene_features(s), s.boxes[0].class_label.index()))
            .collect();
        let db = GroundTruthDatabase::from_scenes(&train);
        ToyModel {
            spec,
            data: Arc::new(ToyData { train, val, db }),
        }
    }

    pub fn spec(&self) -> &ToyTaskSpec {
        &self.spec
    }

    pub fn train_scenes(&self) -> &[PointScene] {
        &self.data.train
    }

    pub fn database(&self) -> &GroundTruthDatabase {
        &self.data.db
    }

    pub fn accuracy(&self, state: &ToyState) -> f64 {
        let centroids: Vec<Option<Vec<f64>>> = state
            .sums
            .iter()
            .zip(&state.counts)
            .map(|(s, &c)| (c > 0).then(|| s.iter().map(|v| v / c as f64).collect()))
            .collect();
        let correct = self
            .data
            .val
            .iter()
            .filter(|(f, label)| {
                let mut best: Option<(usize, f64)> = None;
                for (k, c) in centroids.iter().enumerate() {
                    if let Some(c) = c {
                        let d: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((k, d));
                        }
                    }
                }
                best.map(|(k, _)| k) == Some(*label)
            })
            .count();
        correct as f64 / self.data.val.len().max(1) as f64
    }
}

impl Model for ToyModel {
    type State = ToyState;

    fn init(&self, _seed: u64) -> ToyState {
        let k = ClassLabel::ALL.len();
        ToyState {
            step: 0,
            sums: vec![vec![0.0; FEATURE_BINS]; k],
            counts: vec![0; k],
        }
    }

    fn train(
        &self,
        state: &mut ToyState,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<(), TrainerError> {
        let sums = &mut state.sums;
        let counts = &mut state.counts;
        training_stream(
            &self.data.train,
            &self.data.db,
            policy,
            stream,
            state.step,
            steps,
            self.spec.batch,
            |idx, out| {
                let class = self.data.train[idx].boxes[0].class_label.index();
                for (s, v) in sums[class].iter_mut().zip(scene_features(&out.scene)) {
                    *s += v;
                }
                counts[class] += 1;
            },
        )
        .map_err(|e| TrainerError::Training(e.to_string()))?;
        state.step += steps;
        Ok(())
    }

    fn evaluate(&self, state: &ToyState) -> f64 {
        self.accuracy(state)
    }
}

/// Augments the scenes of `steps` training steps starting at global step
/// `first_step`, `batch` scenes per step, and hands each result with its
/// scene index to `visit`. Scenes are taken round-robin; the `b`-th scene of
/// the `local`-th step of the call draws from
/// `stream / step=local / scene=b`.
#[allow(clippy::too_many_arguments)]
pub fn training_stream(
    scenes: &[PointScene],
    db: &GroundTruthDatabase,
    policy: &PolicyAssignment,
    stream: &StreamId,
    first_step: u64,
    steps: u64,
    batch: usize,
    mut visit: impl FnMut(usize, AugmentOutcome),
) -> Result<(), AugmentError> {
    if scenes.is_empty() {
        return Ok(());
    }
    let n = scenes.len() as u64;
    let resolved = ResolvedPolicy::resolve(policy)?;
    for local in 0..steps {
        let step = first_step + local;
        for b in 0..batch {
            let idx = ((step * batch as u64 + b as u64) % n) as usize;
            let rng = stream.indexed("step", local).indexed("scene", b).stream();
            visit(idx, apply_resolved(&scenes[idx], &resolved, db, &rng)?);
        }
    }
    Ok(())
}

/// The training stream of a whole schedule from a fresh state.
pub fn schedule_stream(
    scenes: &[PointScene],
    db: &GroundTruthDatabase,
    schedule: &Schedule,
    batch: usize,
    mut visit: impl FnMut(usize, AugmentOutcome),
) -> Result<(), AugmentError> {
    let mut step = 0;
    for s in &schedule.steps {
        training_stream(scenes, db, &s.policy, &s.train_stream, step, s.steps, batch, &mut visit)?;
        step += s.steps;
    }
    Ok(())
}

pub fn toy_task_trainer(spec: ToyTaskSpec) -> InProcessTrainer<ToyModel> {
    InProcessTrainer::new(ToyModel::new(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Trainer;

    #[test]
    fn generation_is_deterministic() {
        let spec = ToyTaskSpec::new(3);
        let a = generate_scenes(&spec, Split::Val);
        let b = generate_scenes(&spec, Split::Val);
        assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)));
        assert_eq!(a.len(), spec.val_scenes);
    }

    #[test]
    fn features_are_normalized() {
        let spec = ToyTaskSpec::new(1);
        for s in generate_scenes(&spec, Split::Train).iter().take(20) {
            let f = scene_features(s);
            let grid: f64 = f[..GRID * GRID].iter().sum();
            assert!((grid - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_policy_matches_unaugmented_training() {
        let spec = ToyTaskSpec::new(5);
        let model = ToyModel::new(spec.clone());
        let t = toy_task_trainer(spec.clone());
        let tok = t.init(0).unwrap();
        t.train(&tok, &spec.space.identity_policy(), 30, &StreamId::root(0)).unwrap();
        let mut state = model.init(0);
        for step in 0..30u64 {
            for b in 0..spec.batch {
                let idx = ((step * spec.batch as u64 + b as u64) % spec.train_scenes as u64) as usize;
                let scene = &model.train_scenes()[idx];
                let class = scene.boxes[0].class_label.index();
                for (s, v) in state.sums[class].iter_mut().zip(scene_features(scene)) {
                    *s += v;
                }
                state.counts[class] += 1;
            }
        }
        assert_eq!(t.evaluate(&tok).unwrap(), model.accuracy(&state));
    }
}
