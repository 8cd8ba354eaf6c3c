//! Run configuration: a TOML file plus command-line overrides, resolved
//! into fully explicit values that are echoed to the run manifest.

use std::path::{Path, PathBuf};

use ppba_core::engine::{ExecutionMode, SearchConfig};
use ppba_core::harness::{Method, SurrogateFamily, SurrogateSpec, TaskSpec, ToyTaskSpec};
use ppba_core::protocol::WorkerCommand;
use ppba_core::space::{default_space, ParamCoord, SearchSpace};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ppba,
    Pba,
    Random,
    Replay,
    Augment,
    Bench,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ppba => "ppba",
            Mode::Pba => "pba",
            Mode::Random => "random",
            Mode::Replay => "replay",
            Mode::Augment => "augment",
            Mode::Bench => "bench",
        }
    }

    fn needs_seed(self) -> bool {
        self != Mode::Replay
    }
}

/// The file as written by the operator. Every field is optional here so
/// that missing values can be reported by name.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Search-space config file.
    pub space: Option<PathBuf>,
    pub budget_steps: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub replay: ReplaySection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub num_trials: Option<usize>,
    pub num_iterations: Option<usize>,
    pub num_ops: Option<usize>,
    pub exploration_rate: Option<f64>,
    pub steps_first_iteration: Option<u64>,
    pub steps_per_iteration: Option<u64>,
    pub use_historical: Option<bool>,
    pub rival_count: Option<usize>,
    pub recency_window: Option<usize>,
    pub execution: Option<ExecutionMode>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub surrogate: Option<SurrogateSection>,
    pub toy: Option<ToySection>,
    pub worker: Option<WorkerCommand>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub family: SurrogateFamily,
    /// Seed of the random targets; defaults to the run seed.
    pub target_seed: Option<u64>,
    /// Drifting family only.
    pub drift_coord: Option<ParamCoord>,
    pub drift_weight: Option<f64>,
    pub memory_fraction: Option<f64>,
    pub learning_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    /// Data seed; defaults to the run seed.
    pub seed: Option<u64>,
    pub train_scenes: Option<usize>,
    pub val_scenes: Option<usize>,
    pub points_per_object: Option<usize>,
    pub clutter_points: Option<usize>,
    pub size_jitter: Option<f64>,
    pub point_noise: Option<f64>,
    pub val_rotation: Option<f64>,
    pub batch: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySection {
    pub log: Option<PathBuf>,
    /// `iteration/trial`; defaults to the best record of the log.
    pub trial: Option<String>,
    /// Scene container to stream; with a toy trainer and no file, the toy
    /// training scenes are used.
    pub scenes: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub batch: Option<usize>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub policy: Option<PathBuf>,
    pub scenes: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub methods: Option<Vec<Method>>,
    pub seeds: Option<Vec<u64>>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub execution: Option<ExecutionMode>,
    pub worker_cmd: Option<String>,
    pub budget_steps: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {message}", path.display())]
    Read { path: PathBuf, message: String },
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainerChoice {
    Surrogate { spec: SurrogateSpec },
    Toy { spec: ToyTaskSpec },
    Worker { command: WorkerCommand },
}

impl TrainerChoice {
    pub fn task(&self) -> Option<TaskSpec> {
        match self {
            TrainerChoice::Surrogate { spec } => Some(TaskSpec::Surrogate(spec.clone())),
            TrainerChoice::Toy { spec } => Some(TaskSpec::Toy(spec.clone())),
            TrainerChoice::Worker { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedReplay {
    pub log: PathBuf,
    pub trial: Option<String>,
    pub scenes: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub batch: usize,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedAugment {
    pub policy: PathBuf,
    pub scenes: PathBuf,
    pub db: Option<PathBuf>,
    pub output: PathBuf,
}

/// Fully explicit run description; written verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub space_file: Option<PathBuf>,
    pub search: SearchConfig,
    pub trainer: Option<TrainerChoice>,
    pub budget_steps: u64,
    pub threads: Option<usize>,
    pub replay: Option<ResolvedReplay>,
    pub augment: Option<ResolvedAugment>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                let file: RunFile = toml::from_str(&text).map_err(|e| ConfigError::Read {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RunFile::default(), PathBuf::new()),
        };
        Self::resolve(file, &base, overrides)
    }

    /// Applies `overrides` and defaults; relative paths in the file are
    /// taken relative to `base`.
    pub fn resolve(file: RunFile, base: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
        let rel = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mode = overrides.mode.or(file.mode).ok_or(ConfigError::Missing("mode"))?;
        let seed = overrides.seed.or(file.seed);
        if mode.needs_seed() && seed.is_none() {
            return Err(ConfigError::Missing("seed"));
        }
        let out = overrides.out.clone().or_else(|| file.out.as_ref().map(rel));
        if matches!(mode, Mode::Ppba | Mode::Pba | Mode::Random | Mode::Bench) && out.is_none() {
            return Err(ConfigError::Missing("out"));
        }

        let space_file = file.space.as_ref().map(rel);
        let space = match &space_file {
            Some(p) => SearchSpace::from_config_file(p).map_err(|e| invalid("space", e.to_string()))?,
            None => default_space(),
        };

        let s = &file.search;
        let search = SearchConfig {
            num_trials: s.num_trials.unwrap_or(16),
            num_iterations: s.num_iterations.unwrap_or(10),
            num_ops: s.num_ops.unwrap_or(2),
            exploration_rate: s.exploration_rate.unwrap_or(0.8),
            steps_first_iteration: s.steps_first_iteration.unwrap_or(100),
            steps_per_iteration: s.steps_per_iteration.unwrap_or(100),
            seed: seed.unwrap_or(0),
            space: space.clone(),
            use_historical: s.use_historical.unwrap_or(true),
            rival_count: s.rival_count.unwrap_or(1),
            recency_window: s.recency_window,
            initial_policy: None,
            execution: overrides.execution.or(s.execution).unwrap_or_default(),
        };
        if matches!(mode, Mode::Ppba | Mode::Pba | Mode::Random) {
            search.validate().map_err(|e| match e {
                ppba_core::engine::EngineError::Config { field, message } => invalid(format!("search.{field}"), message),
                other => invalid("search", other.to_string()),
            })?;
        }

        let budget_steps = overrides.budget_steps.or(file.budget_steps).unwrap_or_else(|| search.total_steps());
        let trainer = resolve_trainer(&file.trainer, overrides, &search, seed, &rel)?;
        let needs_trainer = matches!(mode, Mode::Ppba | Mode::Pba | Mode::Random | Mode::Bench);
        if needs_trainer && trainer.is_none() {
            return Err(ConfigError::Missing("trainer"));
        }
        if mode == Mode::Bench && matches!(trainer, Some(TrainerChoice::Worker { .. })) {
            return Err(invalid("trainer", "bench runs on the surrogate or toy task only"));
        }

        let replay = (mode == Mode::Replay)
            .then(|| {
                let r = &file.replay;
                let log = r.log.as_ref().map(rel).ok_or(ConfigError::Missing("replay.log"))?;
                let default_batch = match &trainer {
                    Some(TrainerChoice::Toy { spec }) => spec.batch,
                    _ => ToyTaskSpec::new(0).batch,
                };
                Ok::<_, ConfigError>(ResolvedReplay {
                    log,
                    trial: r.trial.clone(),
                    scenes: r.scenes.as_ref().map(rel),
                    db: r.db.as_ref().map(rel),
                    batch: r.batch.unwrap_or(default_batch),
                    output: r.output.as_ref().map(rel),
                })
            })
            .transpose()?;
        if let Some(r) = &replay {
            if r.batch == 0 {
                return Err(invalid("replay.batch", "must be at least 1"));
            }
            let can_stream = r.scenes.is_some() || matches!(trainer, Some(TrainerChoice::Toy { .. }));
            if r.output.is_some() && !can_stream {
                return Err(ConfigError::Missing("replay.scenes"));
            }
            if r.output.is_none() && trainer.is_none() {
                return Err(invalid("replay", "set `output` to write the augmented stream, a trainer to re-train, or both"));
            }
        }

        let augment = (mode == Mode::Augment)
            .then(|| {
                let a = &file.augment;
                Ok::<_, ConfigError>(ResolvedAugment {
                    policy: a.policy.as_ref().map(rel).ok_or(ConfigError::Missing("augment.policy"))?,
                    scenes: a.scenes.as_ref().map(rel).ok_or(ConfigError::Missing("augment.scenes"))?,
                    db: a.db.as_ref().map(rel),
                    output: a.output.as_ref().map(rel).ok_or(ConfigError::Missing("augment.output"))?,
                })
            })
            .transpose()?;

        let methods = file
            .bench
            .methods
            .clone()
            .unwrap_or_else(|| vec![Method::Ppba, Method::Pba, Method::Random]);
        let seeds = file
            .bench
            .seeds
            .clone()
            .unwrap_or_else(|| (0..5).map(|k| seed.unwrap_or(0) + k).collect());
        if mode == Mode::Bench {
            if methods.is_empty() {
                return Err(invalid("bench.methods", "at least one method is required"));
            }
            if seeds.is_empty() {
                return Err(invalid("bench.seeds", "at least one seed is required"));
            }
        }

        Ok(RunConfig {
            mode,
            seed,
            out,
            space_file,
            search,
            trainer,
            budget_steps,
            threads: file.threads,
            replay,
            augment,
            methods,
            seeds,
        })
    }
}

fn resolve_trainer(
    t: &TrainerSection,
    overrides: &Overrides,
    search: &SearchConfig,
    seed: Option<u64>,
    rel: &dyn Fn(&PathBuf) -> PathBuf,
) -> Result<Option<TrainerChoice>, ConfigError> {
    let from_flag = overrides
        .worker_cmd
        .as_deref()
        .map(|line| WorkerCommand::parse(line).ok_or_else(|| invalid("worker-cmd", "empty command")))
        .transpose()?;
    let count = [t.surrogate.is_some(), t.toy.is_some(), t.worker.is_some() || from_flag.is_some()]
        .iter()
        .filter(|x| **x)
        .count();
    if count > 1 {
        return Err(invalid("trainer", "select exactly one of surrogate, toy or worker"));
    }
    if let Some(s) = &t.surrogate {
        let target_seed = s
            .target_seed
            .or(seed)
            .ok_or(ConfigError::Missing("seed or trainer.surrogate.target_seed"))?;
        let horizon = search.schedule_steps();
        let mut spec = match s.family {
            SurrogateFamily::StaticTarget => {
                if s.drift_coord.is_some() || s.drift_weight.is_some() {
                    return Err(invalid("trainer.surrogate", "drift settings need family = \"drifting_target\""));
                }
                SurrogateSpec::static_target(&search.space, target_seed, horizon)
            }
            SurrogateFamily::DriftingTarget => {
                let coord = s.drift_coord.clone().unwrap_or_else(SurrogateSpec::default_drift_coord);
                if search.space.coord_spec(&coord).is_none() {
                    return Err(invalid("trainer.surrogate.drift_coord", format!("{coord:?} is not a parameter of the space")));
                }
                let weight = s.drift_weight.unwrap_or(100.0);
                if !(weight >= 0.0 && weight.is_finite()) {
                    return Err(invalid("trainer.surrogate.drift_weight", "must be finite and non-negative"));
                }
                SurrogateSpec::drifting_target(&search.space, target_seed, horizon, coord, weight)
            }
        };
        if let Some(m) = s.memory_fraction {
            spec.memory_fraction = m;
        }
        if let Some(l) = s.learning_fraction {
            spec.learning_fraction = l;
        }
        return Ok(Some(TrainerChoice::Surrogate { spec }));
    }
    if let Some(toy) = &t.toy {
        let mut spec = ToyTaskSpec::new(toy.seed.or(seed).ok_or(ConfigError::Missing("seed or trainer.toy.seed"))?);
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = toy.$f { spec.$f = v; })*};
        }
        set!(train_scenes, val_scenes, points_per_object, clutter_points, size_jitter, point_noise, val_rotation, batch);
        if spec.batch == 0 {
            return Err(invalid("trainer.toy.batch", "must be at least 1"));
        }
        spec.space = search.space.clone();
        return Ok(Some(TrainerChoice::Toy { spec }));
    }
    if let Some(command) = from_flag {
        return Ok(Some(TrainerChoice::Worker { command }));
    }
    if let Some(mut command) = t.worker.clone() {
        // Bare names are looked up on PATH; paths are relative to the file.
        if command.program.contains('/') {
            command.program = rel(&PathBuf::from(&command.program)).display().to_string();
        }
        return Ok(Some(TrainerChoice::Worker { command }));
    }
    Ok(None)
}
