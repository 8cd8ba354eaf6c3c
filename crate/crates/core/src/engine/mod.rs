//! Population search over augmentation schedules.
//!
//! Every iteration each of the `M` trials trains under its current policy,
//! is evaluated, joins the population and competes against a random member.
//! A trial beaten by its rival takes over the rival's state and policy and
//! re-explores a small subset of operations; otherwise it continues
//! unchanged. All randomness is drawn from streams named after
//! `(iteration, trial)`, so a deterministic run is reproducible from the
//! seed alone:
//!
//! | stream                          | use                                  |
//! |---------------------------------|--------------------------------------|
//! | `init/trial=i`                  | initial seed, subset and policy      |
//! | `init/iter=t/trial=i`           | re-initialisation after a failure    |
//! | `train/iter=t/trial=i`          | handed to the trainer                |
//! | `compete/iter=t/trial=i`        | rival draw after iteration `t`       |
//! | `explore/iter=t/trial=i`        | subset choice and mutation           |

mod baselines;
mod exploit;
mod log;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};

use crate::augment::OpKind;
use crate::protocol::{StateToken, Trainer, TrainerError};
use crate::rng::StreamId;
use crate::space::{sample_random, OpValues, PolicyAssignment, SearchSpace, SpaceError};

pub use baselines::{
    pba_config, run_pba_baseline, run_random_search, RandomEvaluation, RandomSearchConfig, RandomSearchResult,
};
pub use exploit::{
    compete, explore, random_subset, ExploreBranch, ExploreOutcome, HistoricalEntry, HistoricalOpParams,
    SubsetScenario,
};
pub use log::{
    extract_schedule, replay_schedule, LogError, LogHeader, Origin, Schedule, ScheduleLog, ScheduleStep,
    TrialRecord, LOG_FORMAT, LOG_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialRef {
    pub iteration: usize,
    pub trial: usize,
}

impl fmt::Display for TrialRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={}/trial={}", self.iteration, self.trial)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Results are committed in trial order; runs are reproducible.
    #[default]
    Deterministic,
    /// Results are committed as they complete.
    Throughput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "defaults::num_trials")]
    pub num_trials: usize,
    pub num_iterations: usize,
    #[serde(default = "defaults::num_ops")]
    pub num_ops: usize,
    #[serde(default = "defaults::exploration_rate")]
    pub exploration_rate: f64,
    pub steps_first_iteration: u64,
    pub steps_per_iteration: u64,
    pub seed: u64,
    #[serde(default)]
    pub space: SearchSpace,
    /// Whether successors adopt the best historical values of ops their
    /// parent was not exploring.
    #[serde(default = "defaults::yes")]
    pub use_historical: bool,
    /// Rivals drawn per compete; the best of them is the challenger.
    #[serde(default = "defaults::rival_count")]
    pub rival_count: usize,
    /// Only population members from the last `w` iterations may be drawn.
    #[serde(default)]
    pub recency_window: Option<usize>,
    /// Starting policy for every trial instead of a random one.
    #[serde(default)]
    pub initial_policy: Option<PolicyAssignment>,
    #[serde(default)]
    pub execution: ExecutionMode,
}

mod defaults {
    pub fn num_trials() -> usize {
        16
    }
    pub fn num_ops() -> usize {
        2
    }
    pub fn exploration_rate() -> f64 {
        0.8
    }
    pub fn yes() -> bool {
        true
    }
    pub fn rival_count() -> usize {
        1
    }
}

impl SearchConfig {
    pub fn new(num_iterations: usize, steps_first_iteration: u64, steps_per_iteration: u64, seed: u64) -> Self {
        SearchConfig {
            num_trials: defaults::num_trials(),
            num_iterations,
            num_ops: defaults::num_ops(),
            exploration_rate: defaults::exploration_rate(),
            steps_first_iteration,
            steps_per_iteration,
            seed,
            space: SearchSpace::default(),
            use_historical: true,
            rival_count: 1,
            recency_window: None,
            initial_policy: None,
            execution: ExecutionMode::Deterministic,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |field: &'static str, message: String| Err(EngineError::Config { field, message });
        self.space.check()?;
        let enabled = self.space.enabled_ops().len();
        if self.num_trials == 0 {
            return bad("num_trials", "must be at least 1".into());
        }
        if self.num_iterations == 0 {
            return bad("num_iterations", "must be at least 1".into());
        }
        if self.num_ops == 0 || self.num_ops > enabled {
            return bad("num_ops", format!("must lie in 1..={enabled} (enabled ops), got {}", self.num_ops));
        }
        if !(0.0..=1.0).contains(&self.exploration_rate) {
            return bad("exploration_rate", format!("must lie in [0, 1], got {}", self.exploration_rate));
        }
        if self.rival_count == 0 {
            return bad("rival_count", "must be at least 1".into());
        }
        if self.recency_window == Some(0) {
            return bad("recency_window", "must be at least 1".into());
        }
        if let Some(p) = &self.initial_policy {
            self.space.validate(p)?;
        }
        Ok(())
    }

    pub fn steps_for(&self, iteration: usize) -> u64 {
        if iteration == 0 {
            self.steps_first_iteration
        } else {
            self.steps_per_iteration
        }
    }

    /// Training steps one trial consumes over a full run.
    pub fn schedule_steps(&self) -> u64 {
        self.steps_first_iteration + self.steps_per_iteration * (self.num_iterations as u64 - 1)
    }

    /// Training steps the whole population consumes when nothing fails.
    pub fn total_steps(&self) -> u64 {
        self.schedule_steps() * self.num_trials as u64
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("observer failed: {0}")]
    Observer(String),
    #[error("cannot resume at iteration {iteration}: {message}")]
    Resume { iteration: usize, message: String },
}

/// One population member.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub trial_id: usize,
    pub iteration: usize,
    pub state_token: StateToken,
    pub policy: PolicyAssignment,
    pub explored_ops: Vec<OpKind>,
    pub metric: f64,
}

impl Trial {
    pub fn trial_ref(&self) -> TrialRef {
        TrialRef {
            iteration: self.iteration,
            trial: self.trial_id,
        }
    }

    /// The values of the ops this trial was exploring.
    pub fn explored_values(&self) -> BTreeMap<OpKind, OpValues> {
        self.explored_ops
            .iter()
            .filter_map(|op| self.policy.get(*op).map(|v| (*op, v.clone())))
            .collect()
    }
}

/// Every successfully evaluated trial of the run, in commit order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Population {
    trials: Vec<Trial>,
}

impl Population {
    pub fn push(&mut self, trial: Trial) {
        self.trials.push(trial);
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    /// Highest metric; ties go to the earliest committed trial.
    pub fn best(&self) -> Option<&Trial> {
        self.trials.iter().fold(None, |best: Option<&Trial>, t| match best {
            Some(b) if b.metric >= t.metric => Some(b),
            _ => Some(t),
        })
    }
}

/// Explore instrumentation, summed over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExploreCounters {
    pub calls: u64,
    pub kept_subset: u64,
    pub scenarios: BTreeMap<SubsetScenario, u64>,
    pub branches: BTreeMap<ExploreBranch, u64>,
    /// `(scenario, branch)` pairs, to check which branch each scenario uses.
    pub routed: BTreeMap<String, u64>,
}

impl ExploreCounters {
    pub fn record(&mut self, outcome: &ExploreOutcome) {
        self.calls += 1;
        self.kept_subset += outcome.kept_subset as u64;
        *self.scenarios.entry(outcome.scenario).or_default() += 1;
        for (_, b) in &outcome.branches {
            *self.branches.entry(*b).or_default() += 1;
            *self.routed.entry(Self::route_key(outcome.scenario, *b)).or_default() += 1;
        }
    }

    pub fn route_key(scenario: SubsetScenario, branch: ExploreBranch) -> String {
        let s = serde_json::to_value(scenario).expect("enum serializes");
        let b = serde_json::to_value(branch).expect("enum serializes");
        format!("{}:{}", s.as_str().unwrap_or_default(), b.as_str().unwrap_or_default())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub total_steps: u64,
    pub exploits: u64,
    pub continues: u64,
    pub reinits: u64,
    pub failures: u64,
    pub explore: ExploreCounters,
}

#[derive(Debug)]
pub struct SearchResult {
    /// Highest-metric trial; its state token is kept alive for the caller.
    pub best: Option<Trial>,
    pub log: ScheduleLog,
    pub historical: HistoricalOpParams,
    pub stats: SearchStats,
    pub completed_iterations: usize,
    pub stopped_early: bool,
}

/// Hooks for streaming the log and stopping between iterations.
pub trait SearchObserver {
    fn on_iteration(&mut self, _iteration: usize, _records: &[TrialRecord]) -> Result<(), String> {
        Ok(())
    }

    fn should_stop(&self) -> bool {
        false
    }
}

impl SearchObserver for () {}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Concurrent trials; defaults to the available parallelism.
    pub threads: Option<usize>,
    pub observer: Option<&'a mut dyn SearchObserver>,
    /// Log of an interrupted run with the same config. Its complete
    /// iterations are trained again to rebuild trainer states, committed in
    /// the logged order, and must reproduce the logged records exactly.
    pub resume: Option<&'a ScheduleLog>,
}

pub fn run_search<T: Trainer + ?Sized>(config: &SearchConfig, trainer: &T) -> Result<SearchResult, EngineError> {
    run_search_with(config, trainer, RunOptions::default())
}

pub fn run_search_with<T: Trainer + ?Sized>(
    config: &SearchConfig,
    trainer: &T,
    options: RunOptions<'_>,
) -> Result<SearchResult, EngineError> {
    config.validate()?;
    let threads = options
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, config.num_trials);
    let mut observer = options.observer;
    let replay = match options.resume {
        Some(prior) => resume_orders(config, prior)?,
        None => Vec::new(),
    };
    let mut engine = Engine::new(config);
    let mut pending = init_iteration_zero(config)?;
    let mut completed = 0;
    let mut stopped_early = false;

    for t in 0..config.num_iterations {
        let first_record = engine.log.records.len();
        let mut next = Vec::with_capacity(config.num_trials);
        let mut commit_err = None;
        let mut commit = |p: Pending, outcome: Executed| {
            if commit_err.is_some() {
                release_quietly(trainer, outcome.token.as_ref());
                return;
            }
            match engine.commit(t, p, outcome, trainer) {
                Ok(Some(n)) => next.push(n),
                Ok(None) => {}
                Err(e) => commit_err = Some(e),
            }
        };
        match (replay.get(t), config.execution) {
            (Some(order), _) => {
                let results = parallel_map(pending.len(), threads, |i| execute_one(trainer, config, t, &pending[i]));
                let mut slots: Vec<Option<(Pending, Executed)>> = pending.into_iter().zip(results).map(Some).collect();
                for &trial in order {
                    let Some((p, r)) = slots.iter_mut().find(|s| s.as_ref().is_some_and(|(p, _)| p.trial == trial)).and_then(Option::take) else {
                        return Err(EngineError::Resume {
                            iteration: t,
                            message: format!("trial {trial} is not scheduled"),
                        });
                    };
                    commit(p, r);
                }
            }
            (None, ExecutionMode::Deterministic) => {
                let results = parallel_map(pending.len(), threads, |i| execute_one(trainer, config, t, &pending[i]));
                for (p, r) in pending.into_iter().zip(results) {
                    commit(p, r);
                }
            }
            (None, ExecutionMode::Throughput) => {
                let (tx, rx) = mpsc::channel();
                let view = pending.clone();
                let mut slots: Vec<Option<Pending>> = pending.into_iter().map(Some).collect();
                std::thread::scope(|s| {
                    s.spawn(move || {
                        parallel_map(view.len(), threads, |i| {
                            let _ = tx.send((i, execute_one(trainer, config, t, &view[i])));
                        });
                    });
                    for (idx, outcome) in rx {
                        let p = slots[idx].take().expect("each trial completes once");
                        commit(p, outcome);
                    }
                });
            }
        }
        if let Some(e) = commit_err {
            return Err(e);
        }
        if let (Some(prior), true) = (options.resume, t < replay.len()) {
            check_replayed(t, &engine.log.records[first_record..], prior)?;
        }
        next.sort_by_key(|p| p.trial);
        pending = next;
        completed = t + 1;
        engine.prune(t, trainer);
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_iteration(t, &engine.log.records[first_record..])
                .map_err(EngineError::Observer)?;
            if t + 1 < config.num_iterations && obs.should_stop() {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(engine.finish(trainer, completed, stopped_early))
}

/// Commit order of each complete iteration of `prior`; a trailing partial
/// iteration is ignored.
fn resume_orders(config: &SearchConfig, prior: &ScheduleLog) -> Result<Vec<Vec<usize>>, EngineError> {
    if prior.header.config != *config {
        return Err(EngineError::Resume {
            iteration: 0,
            message: "the log was written with a different config".into(),
        });
    }
    let mut orders: Vec<Vec<usize>> = Vec::new();
    for r in &prior.records {
        if r.iteration == orders.len() {
            orders.push(Vec::new());
        }
        let n = orders.len();
        match orders.last_mut() {
            Some(order) if r.iteration + 1 == n => order.push(r.trial),
            _ => {
                return Err(EngineError::Resume {
                    iteration: r.iteration,
                    message: "records are not grouped by iteration".into(),
                })
            }
        }
    }
    if orders.last().is_some_and(|o| o.len() < config.num_trials) {
        orders.pop();
    }
    Ok(orders)
}

fn check_replayed(t: usize, records: &[TrialRecord], prior: &ScheduleLog) -> Result<(), EngineError> {
    let logged = prior.records.iter().filter(|r| r.iteration == t);
    for (now, then) in records.iter().zip(logged) {
        if ScheduleLog::record_line(now) != ScheduleLog::record_line(then) {
            return Err(EngineError::Resume {
                iteration: t,
                message: format!("trial {} did not reproduce its logged record", now.trial),
            });
        }
    }
    Ok(())
}

/// Iteration-zero trials: fresh states, a uniform random subset of
/// `num_ops` enabled ops each, and a random policy over all ops (or the
/// configured initial policy).
pub fn init_iteration_zero(config: &SearchConfig) -> Result<Vec<Pending>, EngineError> {
    config.validate()?;
    let root = StreamId::root(config.seed);
    Ok((0..config.num_trials)
        .map(|i| {
            let mut rng = root.child("init").indexed("trial", i).stream();
            let seed = rng.next_seed();
            let policy = match &config.initial_policy {
                Some(p) => p.clone(),
                None => sample_random(&config.space, &mut rng.child("policy")),
            };
            let explored = random_subset(&config.space, config.num_ops, &mut rng);
            Pending {
                trial: i,
                start: Start::Init(seed),
                origin: Origin::Init,
                parent: None,
                policy,
                explored,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    Init(u64),
    Fork(StateToken),
}

/// A trial scheduled for an iteration but not yet trained.
#[derive(Clone, Debug, PartialEq)]
pub struct Pending {
    pub trial: usize,
    pub start: Start,
    pub origin: Origin,
    pub parent: Option<TrialRef>,
    pub policy: PolicyAssignment,
    pub explored: Vec<OpKind>,
}

struct Executed {
    token: Option<StateToken>,
    metric: Result<f64, TrainerError>,
}

fn train_stream(config: &SearchConfig, t: usize, i: usize) -> StreamId {
    StreamId::root(config.seed)
        .child("train")
        .indexed("iter", t)
        .indexed("trial", i)
}

fn steps_of(config: &SearchConfig, t: usize, p: &Pending) -> u64 {
    match p.start {
        Start::Init(_) => config.steps_first_iteration,
        Start::Fork(_) => config.steps_for(t),
    }
}

fn execute_one<T: Trainer + ?Sized>(trainer: &T, config: &SearchConfig, t: usize, p: &Pending) -> Executed {
    let token = match &p.start {
        Start::Init(seed) => trainer.init(*seed),
        Start::Fork(parent) => trainer.fork(parent),
    };
    let token = match token {
        Ok(tok) => tok,
        Err(e) => {
            return Executed {
                token: None,
                metric: Err(e),
            }
        }
    };
    let stream = train_stream(config, t, p.trial);
    let metric = trainer
        .train(&token, &p.policy, steps_of(config, t, p), &stream)
        .and_then(|_| trainer.evaluate(&token))
        .and_then(|m| {
            if m.is_nan() {
                Err(TrainerError::Training("metric is NaN".into()))
            } else {
                Ok(m)
            }
        });
    Executed {
        token: Some(token),
        metric,
    }
}

/// Runs `f(0..n)` on up to `threads` scoped threads; results in index
/// order.
pub(crate) fn parallel_map<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let out = f(idx);
                results.lock().expect("results poisoned")[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

fn release_quietly<T: Trainer + ?Sized>(trainer: &T, token: Option<&StateToken>) {
    if let Some(tok) = token {
        if let Err(e) = trainer.release(tok) {
            ::log::warn!("releasing {tok}: {e}");
        }
    }
}

struct Engine<'c> {
    config: &'c SearchConfig,
    root: StreamId,
    population: Population,
    historical: HistoricalOpParams,
    log: ScheduleLog,
    stats: SearchStats,
    released: std::collections::HashSet<TrialRef>,
}

impl<'c> Engine<'c> {
    fn new(config: &'c SearchConfig) -> Self {
        Engine {
            config,
            root: StreamId::root(config.seed),
            population: Population::default(),
            historical: HistoricalOpParams::default(),
            log: ScheduleLog::new(config),
            stats: SearchStats::default(),
            released: Default::default(),
        }
    }

    /// Records a finished trial, adds it to the population and decides its
    /// successor for the next iteration.
    fn commit<T: Trainer + ?Sized>(
        &mut self,
        t: usize,
        p: Pending,
        outcome: Executed,
        trainer: &T,
    ) -> Result<Option<Pending>, EngineError> {
        let cfg = self.config;
        let me = TrialRef {
            iteration: t,
            trial: p.trial,
        };
        let steps = steps_of(cfg, t, &p);
        if outcome.token.is_some() {
            self.stats.total_steps += steps;
        }
        let init_seed = match p.start {
            Start::Init(s) => Some(s),
            Start::Fork(_) => None,
        };
        let (metric, error) = match &outcome.metric {
            Ok(m) => (Some(*m), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.log.records.push(TrialRecord {
            iteration: t,
            trial: p.trial,
            origin: p.origin,
            parent: p.parent,
            init_seed,
            explored_ops: p.explored.clone(),
            policy: p.policy.clone(),
            steps,
            train_stream: train_stream(cfg, t, p.trial),
            metric,
            error,
        });

        let me_trial = match (outcome.token, metric) {
            (Some(token), Some(m)) => {
                let trial = Trial {
                    trial_id: p.trial,
                    iteration: t,
                    state_token: token,
                    policy: p.policy,
                    explored_ops: p.explored,
                    metric: m,
                };
                self.historical
                    .update(&trial.explored_ops, &trial.explored_values(), m, me);
                self.population.push(trial.clone());
                Some(trial)
            }
            (token, _) => {
                self.stats.failures += 1;
                ::log::warn!("trial {me} failed: {}", self.log.records.last().and_then(|r| r.error.as_deref()).unwrap_or(""));
                release_quietly(trainer, token.as_ref());
                None
            }
        };

        if t + 1 >= cfg.num_iterations {
            return Ok(None);
        }
        let candidates: Vec<&Trial> = self
            .population
            .trials()
            .iter()
            .filter(|c| cfg.recency_window.is_none_or(|w| c.iteration + w > t))
            .collect();
        let metrics: Vec<f64> = candidates.iter().map(|c| c.metric).collect();
        let own = me_trial.as_ref().map_or(f64::NEG_INFINITY, |m| m.metric);
        let mut rng = self.root.child("compete").indexed("iter", t).indexed("trial", p.trial).stream();
        let next = match compete(own, &metrics, cfg.rival_count, &mut rng) {
            Some(j) => {
                let rival = candidates[j];
                let mut rng = self.root.child("explore").indexed("iter", t).indexed("trial", p.trial).stream();
                let historical = cfg.use_historical.then_some(&self.historical);
                let out = explore(
                    &rival.explored_values(),
                    historical,
                    &cfg.space,
                    cfg.num_ops,
                    cfg.exploration_rate,
                    &mut rng,
                )?;
                self.stats.exploits += 1;
                self.stats.explore.record(&out);
                let mut policy = rival.policy.clone();
                for (op, v) in out.values {
                    policy.set(op, v);
                }
                Pending {
                    trial: p.trial,
                    start: Start::Fork(rival.state_token.clone()),
                    origin: Origin::Exploit,
                    parent: Some(rival.trial_ref()),
                    policy,
                    explored: out.explored,
                }
            }
            None => match me_trial {
                Some(trial) => {
                    self.stats.continues += 1;
                    Pending {
                        trial: p.trial,
                        start: Start::Fork(trial.state_token),
                        origin: Origin::Continue,
                        parent: Some(me),
                        policy: trial.policy,
                        explored: trial.explored_ops,
                    }
                }
                None => {
                    self.stats.reinits += 1;
                    let seed = self
                        .root
                        .child("init")
                        .indexed("iter", t + 1)
                        .indexed("trial", p.trial)
                        .stream()
                        .next_seed();
                    let last = self.log.records.last().expect("record just pushed");
                    Pending {
                        trial: p.trial,
                        start: Start::Init(seed),
                        origin: Origin::Init,
                        parent: None,
                        policy: last.policy.clone(),
                        explored: last.explored_ops.clone(),
                    }
                }
            },
        };
        Ok(Some(next))
    }

    /// Releases states that can no longer be drawn as rivals.
    fn prune<T: Trainer + ?Sized>(&mut self, t: usize, trainer: &T) {
        let Some(w) = self.config.recency_window else {
            return;
        };
        let best = self.population.best().map(Trial::trial_ref);
        for trial in self.population.trials() {
            let r = trial.trial_ref();
            if trial.iteration + w <= t && Some(r) != best && self.released.insert(r) {
                release_quietly(trainer, Some(&trial.state_token));
            }
        }
    }

    fn finish<T: Trainer + ?Sized>(self, trainer: &T, completed: usize, stopped_early: bool) -> SearchResult {
        let best = self.population.best().cloned();
        for trial in self.population.trials() {
            let r = trial.trial_ref();
            if Some(r) != best.as_ref().map(Trial::trial_ref) && !self.released.contains(&r) {
                release_quietly(trainer, Some(&trial.state_token));
            }
        }
        SearchResult {
            best,
            log: self.log,
            historical: self.historical,
            stats: self.stats,
            completed_iterations: completed,
            stopped_early,
        }
    }
}
