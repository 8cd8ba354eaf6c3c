//! What the search optimizes: per-operation parameter specs, random
//! initialization, local mutation and the identity (no-op) settings.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::OpKind;
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("{op}: missing parameter `{param}`")]
    MissingParam { op: OpKind, param: String },
    #[error("{op}: unknown parameter `{param}`")]
    UnknownParam { op: OpKind, param: String },
    #[error("{op}.{param}: value {value} outside [{lo}, {hi}]")]
    OutOfRange {
        op: OpKind,
        param: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{op}.{param}: `{value}` is not one of {choices:?}")]
    BadChoice {
        op: OpKind,
        param: String,
        value: String,
        choices: Vec<String>,
    },
    #[error("{op}.{param}: expected a {expected} value")]
    WrongKind {
        op: OpKind,
        param: String,
        expected: &'static str,
    },
    #[error("policy has no entry for operation {0}")]
    MissingOp(OpKind),
    #[error("{op} is disabled but the policy assigns it a non-identity value")]
    DisabledOpActive { op: OpKind },
    #[error("invalid search-space config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64 },
    Categorical { choices: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    pub unit: String,
}

impl ParamSpec {
    pub fn continuous(name: &str, lo: f64, hi: f64, unit: &str) -> Self {
        ParamSpec {
            name: name.to_string(),
            kind: ParamKind::Continuous { lo, hi },
            unit: unit.to_string(),
        }
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        ParamSpec {
            name: name.to_string(),
            kind: ParamKind::Categorical {
                choices: choices.iter().map(|c| c.to_string()).collect(),
            },
            unit: String::new(),
        }
    }

    fn check_shape(&self) -> Result<(), String> {
        match &self.kind {
            ParamKind::Continuous { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(format!("{}: need finite lo < hi, got [{lo}, {hi}]", self.name));
                }
            }
            ParamKind::Categorical { choices } => {
                let mut uniq = choices.clone();
                uniq.sort();
                uniq.dedup();
                if uniq.len() < 2 || uniq.len() != choices.len() {
                    return Err(format!("{}: need at least 2 distinct choices", self.name));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RandomStream) -> ParamValue {
        match &self.kind {
            ParamKind::Continuous { lo, hi } => ParamValue::Real(rng.uniform_in(*lo, *hi)),
            ParamKind::Categorical { choices } => {
                ParamValue::Choice(choices[rng.index(choices.len())].clone())
            }
        }
    }

    /// Maps a value to `[0, 1]`: continuous by its range, categorical by
    /// choice index over `choices.len() - 1`.
    pub fn normalize(&self, value: &ParamValue) -> Option<f64> {
        match (&self.kind, value) {
            (ParamKind::Continuous { lo, hi }, ParamValue::Real(v)) => Some((v - lo) / (hi - lo)),
            (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => {
                let idx = choices.iter().position(|x| x == c)?;
                Some(idx as f64 / (choices.len() - 1) as f64)
            }
            _ => None,
        }
    }

    pub fn denormalize(&self, t: f64) -> ParamValue {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            ParamKind::Continuous { lo, hi } => ParamValue::Real(lo + t * (hi - lo)),
            ParamKind::Categorical { choices } => {
                let idx = (t * (choices.len() - 1) as f64).round() as usize;
                ParamValue::Choice(choices[idx].clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Real(f64),
    Choice(String),
}

impl ParamValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            ParamValue::Real(v) => Some(*v),
            ParamValue::Choice(_) => None,
        }
    }

    pub fn as_choice(&self) -> Option<&str> {
        match self {
            ParamValue::Choice(c) => Some(c),
            ParamValue::Real(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Choice(c) => f.write_str(c),
        }
    }
}

/// Values for one operation: its application probability and one value per
/// specialized parameter, keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpValues {
    pub prob: f64,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl OpValues {
    pub fn real(&self, name: &str) -> Option<f64> {
        self.params.get(name).and_then(ParamValue::as_real)
    }

    pub fn choice(&self, name: &str) -> Option<&str> {
        self.params.get(name).and_then(ParamValue::as_choice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub op: OpKind,
    pub application_prob: ParamSpec,
    pub params: Vec<ParamSpec>,
}

impl OpSpec {
    /// Application probability first, then the specialized parameters.
    pub fn all_params(&self) -> impl Iterator<Item = &ParamSpec> {
        std::iter::once(&self.application_prob).chain(self.params.iter())
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn validate(&self, values: &OpValues) -> Result<(), SpaceError> {
        check_value(self.op, &self.application_prob, &ParamValue::Real(values.prob))?;
        for spec in &self.params {
            let v = values.params.get(&spec.name).ok_or_else(|| SpaceError::MissingParam {
                op: self.op,
                param: spec.name.clone(),
            })?;
            check_value(self.op, spec, v)?;
        }
        if let Some(extra) = values.params.keys().find(|k| self.param(k).is_none()) {
            return Err(SpaceError::UnknownParam {
                op: self.op,
                param: extra.clone(),
            });
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RandomStream) -> OpValues {
        let prob = self
            .application_prob
            .sample(rng)
            .as_real()
            .expect("application probability is continuous");
        let params = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.sample(rng)))
            .collect();
        OpValues { prob, params }
    }

    /// Settings under which the operation leaves every scene untouched.
    pub fn identity_values(&self) -> OpValues {
        let params = self
            .params
            .iter()
            .map(|p| {
                let v = match identity_param(self.op, &p.name) {
                    Some(v) => v,
                    // Range overrides may exclude the canonical identity; fall
                    // back to the nearest admissible value.
                    None => p.denormalize(0.0),
                };
                (p.name.clone(), clamp_to(p, v))
            })
            .collect();
        OpValues { prob: 0.0, params }
    }

    /// Local perturbation of `parent`: continuous values move by at most
    /// `knobs.scale` of their range and are clamped; categorical values are
    /// resampled with probability `knobs.categorical_resample_prob`.
    /// Every parameter consumes the same number of draws regardless of
    /// outcome.
    pub fn mutate(
        &self,
        parent: &OpValues,
        knobs: &MutationKnobs,
        rng: &mut RandomStream,
    ) -> Result<OpValues, SpaceError> {
        self.validate(parent)?;
        let prob = mutate_value(&self.application_prob, &ParamValue::Real(parent.prob), knobs, rng)
            .as_real()
            .expect("application probability is continuous");
        let params = self
            .params
            .iter()
            .map(|spec| {
                let v = mutate_value(spec, &parent.params[&spec.name], knobs, rng);
                (spec.name.clone(), v)
            })
            .collect();
        Ok(OpValues { prob, params })
    }
}

fn clamp_to(spec: &ParamSpec, v: ParamValue) -> ParamValue {
    match (&spec.kind, v) {
        (ParamKind::Continuous { lo, hi }, ParamValue::Real(x)) => ParamValue::Real(x.clamp(*lo, *hi)),
        (ParamKind::Categorical { choices }, ParamValue::Choice(c)) if choices.contains(&c) => {
            ParamValue::Choice(c)
        }
        (_, _) => spec.denormalize(0.0),
    }
}

fn mutate_value(
    spec: &ParamSpec,
    parent: &ParamValue,
    knobs: &MutationKnobs,
    rng: &mut RandomStream,
) -> ParamValue {
    match (&spec.kind, parent) {
        (ParamKind::Continuous { lo, hi }, ParamValue::Real(v)) => {
            let reach = knobs.scale * (hi - lo);
            let delta = rng.uniform_in(-reach, reach);
            ParamValue::Real((v + delta).clamp(*lo, *hi))
        }
        (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => {
            let resample = rng.chance(knobs.categorical_resample_prob);
            let idx = rng.index(choices.len());
            if resample {
                ParamValue::Choice(choices[idx].clone())
            } else {
                ParamValue::Choice(c.clone())
            }
        }
        _ => unreachable!("parent validated against spec"),
    }
}

fn check_value(op: OpKind, spec: &ParamSpec, value: &ParamValue) -> Result<(), SpaceError> {
    match (&spec.kind, value) {
        (ParamKind::Continuous { lo, hi }, ParamValue::Real(v)) => {
            if v.is_finite() && *v >= *lo && *v <= *hi {
                Ok(())
            } else {
                Err(SpaceError::OutOfRange {
                    op,
                    param: spec.name.clone(),
                    value: *v,
                    lo: *lo,
                    hi: *hi,
                })
            }
        }
        (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => {
            if choices.contains(c) {
                Ok(())
            } else {
                Err(SpaceError::BadChoice {
                    op,
                    param: spec.name.clone(),
                    value: c.clone(),
                    choices: choices.clone(),
                })
            }
        }
        (ParamKind::Continuous { .. }, _) => Err(SpaceError::WrongKind {
            op,
            param: spec.name.clone(),
            expected: "numeric",
        }),
        (ParamKind::Categorical { .. }, _) => Err(SpaceError::WrongKind {
            op,
            param: spec.name.clone(),
            expected: "categorical",
        }),
    }
}

fn identity_param(op: OpKind, name: &str) -> Option<ParamValue> {
    use ParamValue::{Choice, Real};
    let v = match (op, name) {
        (OpKind::GroundTruthAugmentor, _) => Real(0.0),
        (OpKind::WorldScaling, "scaling_range") => Real(1.0),
        (OpKind::RandomRotation, "max_angle") => Real(0.0),
        (OpKind::GlobalTranslateNoise, _) => Real(0.0),
        (OpKind::FrustumDropout, "keep_prob") => Real(1.0),
        (OpKind::FrustumDropout, "drop_type") => Choice("union".into()),
        (OpKind::FrustumNoise, "max_noise") => Real(0.0),
        (OpKind::FrustumNoise, "noise_type") => Choice("union".into()),
        (OpKind::FrustumDropout | OpKind::FrustumNoise, "theta_width" | "phi_width") => Real(0.0),
        (OpKind::FrustumDropout | OpKind::FrustumNoise, "distance") => Real(0.0),
        (OpKind::RandomDropout, "dropout_prob") => Real(0.0),
        _ => return None,
    };
    Some(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationKnobs {
    /// Half-width of the additive perturbation, as a fraction of the range.
    #[serde(default = "default_mutation_scale")]
    pub scale: f64,

    #[serde(default = "default_resample_prob")]
    pub categorical_resample_prob: f64,
}

fn default_mutation_scale() -> f64 {
    0.2
}

fn default_resample_prob() -> f64 {
    0.3
}

impl Default for MutationKnobs {
    fn default() -> Self {
        MutationKnobs {
            scale: default_mutation_scale(),
            categorical_resample_prob: default_resample_prob(),
        }
    }
}

/// The full set of searchable operations with an enabled mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub ops: Vec<OpSpec>,
    pub enabled: BTreeMap<OpKind, bool>,
    #[serde(default)]
    pub mutation: MutationKnobs,
}

impl Default for SearchSpace {
    fn default() -> Self {
        default_space()
    }
}

/// All eight operations with their canonical parameter ranges.
pub fn default_space() -> SearchSpace {
    let prob = |name: &str| ParamSpec::continuous(name, 0.0, 1.0, "probability");
    let app = || prob("prob");
    let frustum = |op: OpKind, magnitude: ParamSpec, kind: &str| OpSpec {
        op,
        application_prob: app(),
        params: vec![
            ParamSpec::continuous("theta_width", 0.0, 0.4, "rad"),
            ParamSpec::continuous("phi_width", 0.0, 1.3, "rad"),
            ParamSpec::continuous("distance", 0.0, 50.0, "m"),
            magnitude,
            ParamSpec::categorical(kind, &["union", "intersection"]),
        ],
    };
    let ops = vec![
        OpSpec {
            op: OpKind::GroundTruthAugmentor,
            application_prob: app(),
            params: vec![
                prob("vehicle_prob"),
                prob("pedestrian_prob"),
                prob("cyclist_prob"),
                prob("other_prob"),
            ],
        },
        OpSpec {
            op: OpKind::RandomFlip,
            application_prob: prob("flip_prob"),
            params: vec![],
        },
        OpSpec {
            op: OpKind::WorldScaling,
            application_prob: app(),
            params: vec![ParamSpec::continuous("scaling_range", 0.5, 1.5, "scale factor")],
        },
        OpSpec {
            op: OpKind::GlobalTranslateNoise,
            application_prob: app(),
            params: vec![
                ParamSpec::continuous("std_x", 0.0, 0.3, "m"),
                ParamSpec::continuous("std_y", 0.0, 0.3, "m"),
                ParamSpec::continuous("std_z", 0.0, 0.3, "m"),
            ],
        },
        frustum(
            OpKind::FrustumDropout,
            ParamSpec::continuous("keep_prob", 0.0, 1.0, "probability"),
            "drop_type",
        ),
        frustum(
            OpKind::FrustumNoise,
            ParamSpec::continuous("max_noise", 0.0, 1.0, "m"),
            "noise_type",
        ),
        OpSpec {
            op: OpKind::RandomRotation,
            application_prob: app(),
            params: vec![ParamSpec::continuous("max_angle", 0.0, FRAC_PI_4, "rad")],
        },
        OpSpec {
            op: OpKind::RandomDropout,
            application_prob: app(),
            params: vec![prob("dropout_prob")],
        },
    ];
    let enabled = OpKind::ALL.iter().map(|&k| (k, true)).collect();
    SearchSpace {
        ops,
        enabled,
        mutation: MutationKnobs::default(),
    }
}

/// One searchable coordinate: `param == None` is the op's application
/// probability.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamCoord {
    pub op: OpKind,
    pub param: Option<String>,
}

impl fmt::Display for ParamCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.param {
            Some(p) => write!(f, "{}.{}", self.op, p),
            None => write!(f, "{}.prob", self.op),
        }
    }
}

impl SearchSpace {
    pub fn op(&self, kind: OpKind) -> &OpSpec {
        self.ops
            .iter()
            .find(|o| o.op == kind)
            .expect("search space holds every operation")
    }

    pub fn is_enabled(&self, kind: OpKind) -> bool {
        self.enabled.get(&kind).copied().unwrap_or(false)
    }

    pub fn enabled_ops(&self) -> Vec<OpKind> {
        OpKind::ALL.iter().copied().filter(|k| self.is_enabled(*k)).collect()
    }

    pub fn with_disabled(mut self, ops: &[OpKind]) -> Self {
        for op in ops {
            self.enabled.insert(*op, false);
        }
        self
    }

    pub fn param_count(&self) -> usize {
        self.ops.iter().map(|o| 1 + o.params.len()).sum()
    }

    /// Every coordinate of every operation in executor order.
    pub fn coords(&self) -> Vec<ParamCoord> {
        OpKind::ALL
            .iter()
            .flat_map(|&k| {
                let spec = self.op(k);
                std::iter::once(ParamCoord { op: k, param: None }).chain(
                    spec.params.iter().map(move |p| ParamCoord {
                        op: k,
                        param: Some(p.name.clone()),
                    }),
                )
            })
            .collect()
    }

    pub fn coord_spec(&self, coord: &ParamCoord) -> Option<&ParamSpec> {
        let spec = self.op(coord.op);
        match &coord.param {
            None => Some(&spec.application_prob),
            Some(name) => spec.param(name),
        }
    }

    pub fn check(&self) -> Result<(), SpaceError> {
        for kind in OpKind::ALL {
            if self.ops.iter().filter(|o| o.op == kind).count() != 1 {
                return Err(SpaceError::Config(format!("operation {kind} must appear exactly once")));
            }
        }
        for op in &self.ops {
            for p in op.all_params() {
                p.check_shape().map_err(SpaceError::Config)?;
            }
            if let ParamKind::Continuous { lo, hi } = op.application_prob.kind {
                if lo < 0.0 || hi > 1.0 {
                    return Err(SpaceError::Config(format!(
                        "{}: application probability range must lie in [0, 1]",
                        op.op
                    )));
                }
            } else {
                return Err(SpaceError::Config(format!(
                    "{}: application probability must be continuous",
                    op.op
                )));
            }
        }
        if self.enabled_ops().is_empty() {
            return Err(SpaceError::Config("at least one operation must be enabled".into()));
        }
        let m = &self.mutation;
        if !(m.scale >= 0.0 && m.scale.is_finite()) {
            return Err(SpaceError::Config("mutation scale must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&m.categorical_resample_prob) {
            return Err(SpaceError::Config("categorical_resample_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn identity_policy(&self) -> PolicyAssignment {
        PolicyAssignment {
            ops: OpKind::ALL
                .iter()
                .map(|&k| (k, self.op(k).identity_values()))
                .collect(),
        }
    }

    /// Values for one op: sampled when enabled, identity otherwise.
    pub fn sample_op(&self, kind: OpKind, rng: &mut RandomStream) -> OpValues {
        if self.is_enabled(kind) {
            self.op(kind).sample(rng)
        } else {
            self.op(kind).identity_values()
        }
    }

    pub fn mutate_op(
        &self,
        kind: OpKind,
        parent: &OpValues,
        rng: &mut RandomStream,
    ) -> Result<OpValues, SpaceError> {
        if self.is_enabled(kind) {
            self.op(kind).mutate(parent, &self.mutation, rng)
        } else {
            Ok(self.op(kind).identity_values())
        }
    }

    /// Checks every op's values against its spec, and that disabled ops hold
    /// exactly their identity values.
    pub fn validate(&self, policy: &PolicyAssignment) -> Result<(), SpaceError> {
        for kind in OpKind::ALL {
            let values = policy.ops.get(&kind).ok_or(SpaceError::MissingOp(kind))?;
            let spec = self.op(kind);
            spec.validate(values)?;
            if !self.is_enabled(kind) && *values != spec.identity_values() {
                return Err(SpaceError::DisabledOpActive { op: kind });
            }
        }
        Ok(())
    }

    /// Normalized `[0, 1]` value of every coordinate, in [`Self::coords`]
    /// order.
    pub fn normalized(&self, policy: &PolicyAssignment) -> Vec<f64> {
        self.coords()
            .iter()
            .map(|c| self.normalized_coord(policy, c).unwrap_or(0.0))
            .collect()
    }

    pub fn normalized_coord(&self, policy: &PolicyAssignment, coord: &ParamCoord) -> Option<f64> {
        let values = policy.ops.get(&coord.op)?;
        let spec = self.coord_spec(coord)?;
        match &coord.param {
            None => spec.normalize(&ParamValue::Real(values.prob)),
            Some(name) => spec.normalize(values.params.get(name)?),
        }
    }

    pub fn from_config_str(text: &str) -> Result<SearchSpace, SpaceError> {
        let cfg: SpaceConfig =
            toml::from_str(text).map_err(|e| SpaceError::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn from_config_file(path: &Path) -> Result<SearchSpace, SpaceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpaceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_config_str(&text)
    }
}

pub const SPACE_CONFIG_FORMAT: &str = "ppba-space";
pub const SPACE_CONFIG_VERSION: u32 = 1;

/// Human-editable search-space configuration (TOML).
///
/// ```toml
/// format = "ppba-space"
/// version = 1
/// disabled = ["GroundTruthAugmentor", "RandomFlip"]
///
/// [mutation]
/// scale = 0.2
/// categorical_resample_prob = 0.3
///
/// [ranges.FrustumDropout]
/// distance = [0.0, 30.0]
/// ```
///
/// Range overrides must stay inside the default range of the parameter; the
/// application probability is addressed as `prob`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub format: Option<String>,
    pub version: Option<u32>,
    #[serde(default)]
    pub enabled: Option<Vec<OpKind>>,
    #[serde(default)]
    pub disabled: Vec<OpKind>,
    #[serde(default)]
    pub mutation: Option<MutationKnobs>,
    #[serde(default)]
    pub ranges: BTreeMap<OpKind, BTreeMap<String, [f64; 2]>>,
}

impl SpaceConfig {
    pub fn resolve(&self) -> Result<SearchSpace, SpaceError> {
        if let Some(f) = &self.format {
            if f != SPACE_CONFIG_FORMAT {
                return Err(SpaceError::Config(format!("format must be `{SPACE_CONFIG_FORMAT}`, got `{f}`")));
            }
        }
        if let Some(v) = self.version {
            if v != SPACE_CONFIG_VERSION {
                return Err(SpaceError::Config(format!("unsupported version {v}")));
            }
        }
        let mut space = default_space();
        if let Some(enabled) = &self.enabled {
            for k in OpKind::ALL {
                space.enabled.insert(k, enabled.contains(&k));
            }
        }
        for k in &self.disabled {
            space.enabled.insert(*k, false);
        }
        if let Some(m) = &self.mutation {
            space.mutation = m.clone();
        }
        for (kind, overrides) in &self.ranges {
            let spec = space
                .ops
                .iter_mut()
                .find(|o| o.op == *kind)
                .expect("default space holds every operation");
            for (name, [lo, hi]) in overrides {
                let param = if name == "prob" || (name == &spec.application_prob.name) {
                    &mut spec.application_prob
                } else {
                    spec.params.iter_mut().find(|p| &p.name == name).ok_or_else(|| {
                        SpaceError::Config(format!("{kind}: unknown parameter `{name}` in ranges"))
                    })?
                };
                match &mut param.kind {
                    ParamKind::Continuous { lo: dlo, hi: dhi } => {
                        if !(lo < hi && *lo >= *dlo && *hi <= *dhi) {
                            return Err(SpaceError::Config(format!(
                                "{kind}.{name}: override [{lo}, {hi}] must be a non-empty sub-range of [{dlo}, {dhi}]"
                            )));
                        }
                        *dlo = *lo;
                        *dhi = *hi;
                    }
                    ParamKind::Categorical { .. } => {
                        return Err(SpaceError::Config(format!(
                            "{kind}.{name}: categorical parameters have no range"
                        )));
                    }
                }
            }
        }
        space.check()?;
        Ok(space)
    }
}

/// Concrete values for every operation at one schedule step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyAssignment {
    pub ops: BTreeMap<OpKind, OpValues>,
}

impl PolicyAssignment {
    pub fn get(&self, kind: OpKind) -> Option<&OpValues> {
        self.ops.get(&kind)
    }

    pub fn set(&mut self, kind: OpKind, values: OpValues) {
        self.ops.insert(kind, values);
    }
}

/// Samples a complete policy: every enabled op uniformly over its ranges,
/// disabled ops pinned to identity.
pub fn sample_random(space: &SearchSpace, rng: &mut RandomStream) -> PolicyAssignment {
    PolicyAssignment {
        ops: OpKind::ALL
            .iter()
            .map(|&k| (k, space.sample_op(k, rng)))
            .collect(),
    }
}
