//! Closed-form objectives over normalized policy coordinates.

use serde::{Deserialize, Serialize};

use crate::augment::OpKind;
use crate::protocol::{InProcessTrainer, Model, TrainerError};
use crate::rng::{RandomStream, StreamId};
use crate::space::{ParamCoord, ParamKind, PolicyAssignment, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateFamily {
    StaticTarget,
    DriftingTarget,
}

/// Piecewise-linear target over training progress in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub coord: ParamCoord,
    /// `(progress, target)` knots, sorted by progress.
    pub knots: Vec<(f64, f64)>,
}

impl Drift {
    pub fn at(&self, progress: f64) -> f64 {
        let k = &self.knots;
        match k.iter().position(|&(p, _)| p >= progress) {
            None => k.last().map_or(0.0, |x| x.1),
            Some(0) => k[0].1,
            Some(i) => {
                let (p0, v0) = k[i - 1];
                let (p1, v1) = k[i];
                if p1 <= p0 {
                    v1
                } else {
                    v0 + (v1 - v0) * (progress - p0) / (p1 - p0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub family: SurrogateFamily,
    pub space: SearchSpace,
    /// One entry per coordinate of `space.coords()`, normalized.
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub drift: Vec<Drift>,
    /// Steps of a full schedule; progress is `step / horizon`.
    pub horizon: u64,
    /// Ω averages per-step scores with weights decaying by `e` every
    /// `memory_fraction * horizon` steps.
    #[serde(default = "default_memory_fraction")]
    pub memory_fraction: f64,
    /// Ω carries an undertraining penalty `exp(-step / (learning_fraction *
    /// horizon))`, so longer-trained states score higher.
    #[serde(default = "default_learning_fraction")]
    pub learning_fraction: f64,
}

fn default_memory_fraction() -> f64 {
    0.1
}

fn default_learning_fraction() -> f64 {
    0.3
}

impl SurrogateSpec {
    /// Uniform random targets (categorical targets on a valid choice), unit
    /// weights.
    pub fn static_target(space: &SearchSpace, seed: u64, horizon: u64) -> Self {
        let mut rng = StreamId::root(seed).child("surrogate").stream();
        let coords = space.coords();
        let targets = coords
            .iter()
            .map(|c| random_target(space, c, &mut rng))
            .collect();
        SurrogateSpec {
            family: SurrogateFamily::StaticTarget,
            space: space.clone(),
            weights: vec![1.0; coords.len()],
            targets,
            drift: Vec::new(),
            horizon,
            memory_fraction: default_memory_fraction(),
            learning_fraction: default_learning_fraction(),
        }
    }

    /// Static targets plus one heavily weighted coordinate whose target
    /// falls linearly from 0.9 to 0.1 over training.
    pub fn drifting_target(space: &SearchSpace, seed: u64, horizon: u64, coord: ParamCoord, weight: f64) -> Self {
        let mut spec = Self::static_target(space, seed, horizon);
        spec.family = SurrogateFamily::DriftingTarget;
        if let Some(j) = space.coords().iter().position(|c| *c == coord) {
            spec.weights[j] = weight;
            spec.targets[j] = 0.9;
        }
        spec.drift = vec![Drift {
            coord,
            knots: vec![(0.0, 0.9), (1.0, 0.1)],
        }];
        spec
    }

    /// Default drifting coordinate: the application probability of
    /// RandomRotation.
    pub fn default_drift_coord() -> ParamCoord {
        ParamCoord {
            op: OpKind::RandomRotation,
            param: None,
        }
    }

    /// Per-step retention of the score average.
    pub fn decay(&self) -> f64 {
        let memory = (self.memory_fraction * self.horizon as f64).max(1e-9);
        (-1.0 / memory).exp()
    }

    pub fn undertraining(&self, step: u64) -> f64 {
        let scale = self.learning_fraction * self.horizon as f64;
        if scale > 0.0 {
            (-(step as f64) / scale).exp()
        } else {
            0.0
        }
    }

    pub fn target_at(&self, progress: f64) -> Vec<f64> {
        let coords = self.space.coords();
        let mut t = self.targets.clone();
        for d in &self.drift {
            if let Some(j) = coords.iter().position(|c| *c == d.coord) {
                t[j] = d.at(progress);
            }
        }
        t
    }

    /// Per-step score `1 - sum w_j (x_j - target_j)^2 / sum w_j`.
    pub fn score(&self, policy: &PolicyAssignment, progress: f64) -> f64 {
        self.score_normalized(&self.space.normalized(policy), progress)
    }

    pub fn score_normalized(&self, x: &[f64], progress: f64) -> f64 {
        let target = self.target_at(progress);
        let wsum: f64 = self.weights.iter().sum();
        if wsum <= 0.0 {
            return 1.0;
        }
        let loss: f64 = x
            .iter()
            .zip(&target)
            .zip(&self.weights)
            .map(|((x, t), w)| w * (x - t) * (x - t))
            .sum();
        1.0 - loss / wsum
    }

    /// Policy sitting exactly on the targets at `progress`.
    pub fn optimum(&self, progress: f64) -> PolicyAssignment {
        let mut p = self.space.identity_policy();
        for (c, t) in self.space.coords().iter().zip(self.target_at(progress)) {
            let spec = self.space.coord_spec(c).expect("coordinate exists");
            let v = spec.denormalize(t);
            let values = p.ops.get_mut(&c.op).expect("all ops present");
            match &c.param {
                None => values.prob = v.as_real().expect("probability is real"),
                Some(name) => {
                    values.params.insert(name.clone(), v);
                }
            }
        }
        p
    }
}

fn random_target(space: &SearchSpace, c: &ParamCoord, rng: &mut RandomStream) -> f64 {
    let spec = space.coord_spec(c).expect("coordinate exists");
    match &spec.kind {
        ParamKind::Continuous { .. } => rng.uniform(),
        ParamKind::Categorical { choices } => {
            let k = choices.len();
            let i = rng.index(k);
            if k > 1 {
                i as f64 / (k - 1) as f64
            } else {
                0.0
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState {
    pub step: u64,
    /// Plain sum of per-step scores.
    pub total: f64,
    /// Exponentially weighted sum of per-step scores.
    pub score: f64,
    /// The same sum over constant 1, for bias correction.
    pub weight: f64,
}

/// Ω is the recency-weighted mean of the per-step scores seen so far, so it
/// reflects mostly the last `memory_fraction` of the horizon, minus the
/// undertraining penalty; an untrained state scores negative infinity.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    pub spec: SurrogateSpec,
}

impl Model for SurrogateModel {
    type State = SurrogateState;

    fn init(&self, _seed: u64) -> SurrogateState {
        SurrogateState::default()
    }

    fn train(
        &self,
        state: &mut SurrogateState,
        policy: &PolicyAssignment,
        steps: u64,
        _stream: &StreamId,
    ) -> Result<(), TrainerError> {
        let x = self.spec.space.normalized(policy);
        let horizon = self.spec.horizon.max(1) as f64;
        let decay = self.spec.decay();
        let fixed = self.spec.drift.is_empty().then(|| self.spec.score_normalized(&x, 0.0));
        for s in state.step..state.step + steps {
            let f = fixed.unwrap_or_else(|| self.spec.score_normalized(&x, s as f64 / horizon));
            state.total += f;
            state.score = decay * state.score + (1.0 - decay) * f;
            state.weight = decay * state.weight + (1.0 - decay);
        }
        state.step += steps;
        Ok(())
    }

    fn evaluate(&self, state: &SurrogateState) -> f64 {
        if state.weight > 0.0 {
            state.score / state.weight - self.spec.undertraining(state.step)
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub fn surrogate_trainer(spec: SurrogateSpec) -> InProcessTrainer<SurrogateModel> {
    InProcessTrainer::new(SurrogateModel { spec })
}
