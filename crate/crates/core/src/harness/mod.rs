//! Desk-scale benchmark: surrogate objectives, a toy point-cloud task, and a
//! runner comparing population search against its baselines at equal
//! training budgets.

mod surrogate;
mod toy;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{
    extract_schedule, parallel_map, pba_config, run_random_search, run_search_with, EngineError, LogError,
    RandomSearchConfig, RunOptions, ScheduleLog, SearchConfig,
};
use crate::protocol::Trainer;
use crate::space::{ParamCoord, SearchSpace};

pub use surrogate::{surrogate_trainer, Drift, SurrogateFamily, SurrogateModel, SurrogateSpec, SurrogateState};
pub use toy::{
    generate_scenes, scene_features, schedule_stream, toy_task_trainer, training_stream, Split, ToyModel, ToyState,
    ToyTaskSpec, FEATURE_BINS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ppba,
    Pba,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ppba => "ppba",
            Method::Pba => "pba",
            Method::Random => "random",
        }
    }
}

/// What the methods are compared on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskSpec {
    /// The spec's `horizon` is overwritten with the schedule length derived
    /// from the budget.
    Surrogate(SurrogateSpec),
    Toy(ToyTaskSpec),
}

impl TaskSpec {
    fn with_horizon(&self, horizon: u64) -> TaskSpec {
        match self {
            TaskSpec::Surrogate(s) => {
                let mut s = s.clone();
                s.horizon = horizon;
                TaskSpec::Surrogate(s)
            }
            other => other.clone(),
        }
    }

    pub fn trainer(&self) -> Box<dyn Trainer> {
        match self {
            TaskSpec::Surrogate(s) => Box::new(surrogate_trainer(s.clone())),
            TaskSpec::Toy(t) => Box::new(toy_task_trainer(t.clone())),
        }
    }

    pub fn space(&self) -> &SearchSpace {
        match self {
            TaskSpec::Surrogate(s) => &s.space,
            TaskSpec::Toy(t) => &t.space,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Population size, subset size, step lengths and other search knobs;
    /// `num_iterations` and `seed` are derived per run.
    pub search: SearchConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Total training steps each method may consume per seed.
    pub budget_steps: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ComparisonConfig {
    /// Iterations a population of `num_trials` can afford within the
    /// budget.
    pub fn derived_iterations(&self) -> Result<usize, EngineError> {
        let s = &self.search;
        let m = s.num_trials as u64;
        let first = m * s.steps_first_iteration;
        if m == 0 || self.budget_steps < first || first == 0 {
            return Err(EngineError::Config {
                field: "budget_steps",
                message: format!(
                    "budget {} is smaller than one first iteration ({} trials x {} steps)",
                    self.budget_steps, s.num_trials, s.steps_first_iteration
                ),
            });
        }
        let per = m * s.steps_per_iteration;
        let extra = (self.budget_steps - first).checked_div(per).unwrap_or(0);
        Ok(1 + extra as usize)
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.methods.is_empty() {
            return Err(EngineError::Config {
                field: "methods",
                message: "at least one method is required".into(),
            });
        }
        if self.seeds.is_empty() {
            return Err(EngineError::Config {
                field: "seeds",
                message: "at least one seed is required".into(),
            });
        }
        self.derived_iterations().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub seed: u64,
    pub budget_steps: u64,
    pub final_best: f64,
    pub total_steps: u64,
    pub wall_clock_secs: f64,
    /// `(cumulative training steps, best Ω so far)`.
    pub trajectory: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format: String,
    pub version: u32,
    pub config: ComparisonConfig,
    pub task: TaskSpec,
    pub num_iterations: usize,
    pub rows: Vec<ComparisonRow>,
    /// `wins["a>=b"]`: seeds on which method `a` scored at least `b`.
    pub wins: BTreeMap<String, usize>,
}

pub const REPORT_FORMAT: &str = "ppba-comparison";
pub const REPORT_VERSION: u32 = 1;

impl ComparisonReport {
    pub fn row(&self, method: Method, seed: u64) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method && r.seed == seed)
    }

    /// Seeds on which `a` scored at least as well as `b`.
    pub fn wins(&self, a: Method, b: Method) -> usize {
        self.wins.get(&win_key(a, b)).copied().unwrap_or(0)
    }

    /// One row per (method, seed).
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,seed,budget_steps,total_steps,final_best,wall_clock_secs\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.method.name(),
                r.seed,
                r.budget_steps,
                r.total_steps,
                r.final_best,
                r.wall_clock_secs
            );
        }
        out
    }

    /// Best Ω against consumed budget, one line per point.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("method,seed,steps,best\n");
        for r in &self.rows {
            for (steps, best) in &r.trajectory {
                let _ = writeln!(out, "{},{},{},{}", r.method.name(), r.seed, steps, best);
            }
        }
        out
    }

    /// File stem embedding the methods, seeds and budget.
    pub fn file_stem(&self) -> String {
        let methods: Vec<&str> = self.config.methods.iter().map(|m| m.name()).collect();
        let seeds: Vec<String> = self.config.seeds.iter().map(u64::to_string).collect();
        format!(
            "compare_{}_seeds-{}_budget-{}",
            methods.join("-"),
            seeds.join("-"),
            self.config.budget_steps
        )
    }
}

fn win_key(a: Method, b: Method) -> String {
    format!("{}>={}", a.name(), b.name())
}

/// Runs every method on every seed at the same training-step budget.
pub fn run_comparison(task: &TaskSpec, config: &ComparisonConfig) -> Result<ComparisonReport, EngineError> {
    config.validate()?;
    let n = config.derived_iterations()?;
    let mut search = config.search.clone();
    search.num_iterations = n;
    let task = task.with_horizon(search.schedule_steps());
    let mut jobs = Vec::new();
    for &seed in &config.seeds {
        for &method in &config.methods {
            jobs.push((method, seed));
        }
    }
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = parallel_map(jobs.len(), threads, |k| {
        let (method, seed) = jobs[k];
        let mut cfg = search.clone();
        cfg.seed = seed;
        run_method(&task, method, &cfg, config.budget_steps)
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut wins = BTreeMap::new();
    for &a in &config.methods {
        for &b in &config.methods {
            if a == b {
                continue;
            }
            let count = config
                .seeds
                .iter()
                .filter(|&&s| {
                    let ra = rows.iter().find(|r| r.method == a && r.seed == s);
                    let rb = rows.iter().find(|r| r.method == b && r.seed == s);
                    matches!((ra, rb), (Some(x), Some(y)) if x.final_best >= y.final_best)
                })
                .count();
            wins.insert(win_key(a, b), count);
        }
    }
    Ok(ComparisonReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        config: config.clone(),
        task,
        num_iterations: n,
        rows,
        wins,
    })
}

fn run_method(task: &TaskSpec, method: Method, cfg: &SearchConfig, budget: u64) -> Result<ComparisonRow, EngineError> {
    let trainer = task.trainer();
    let start = Instant::now();
    let (final_best, total_steps, trajectory) = match method {
        Method::Ppba | Method::Pba => {
            let cfg = if method == Method::Pba { pba_config(cfg) } else { cfg.clone() };
            let options = RunOptions {
                threads: Some(1),
                ..Default::default()
            };
            let result = run_search_with(&cfg, &trainer, options)?;
            if let Some(best) = &result.best {
                let _ = trainer.release(&best.state_token);
            }
            let trajectory = search_trajectory(&result.log);
            let best = result.best.map_or(f64::NEG_INFINITY, |b| b.metric);
            (best, result.stats.total_steps, trajectory)
        }
        Method::Random => {
            let steps = cfg.schedule_steps().max(1);
            let rs = RandomSearchConfig::matching(cfg, (budget / steps).max(1) as usize);
            let result = run_random_search(&rs, &trainer, Some(1))?;
            let mut best = f64::NEG_INFINITY;
            let mut spent = 0;
            let trajectory = result
                .evaluations
                .iter()
                .map(|e| {
                    spent += e.steps;
                    best = best.max(e.metric.unwrap_or(f64::NEG_INFINITY));
                    (spent, best)
                })
                .collect();
            (best, result.total_steps, trajectory)
        }
    };
    Ok(ComparisonRow {
        method,
        seed: cfg.seed,
        budget_steps: budget,
        final_best,
        total_steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        trajectory,
    })
}

/// Best Ω so far after each iteration against cumulative steps.
pub fn search_trajectory(log: &ScheduleLog) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = Vec::new();
    let mut spent = 0;
    let mut best = f64::NEG_INFINITY;
    let mut current = None;
    for r in &log.records {
        if current.is_some_and(|t| t != r.iteration) {
            out.push((spent, best));
        }
        current = Some(r.iteration);
        spent += r.steps;
        best = best.max(r.omega());
    }
    if current.is_some() {
        out.push((spent, best));
    }
    out
}

/// Per-iteration normalized parameter values along one lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTable {
    pub lineage_of: crate::engine::TrialRef,
    pub coords: Vec<ParamCoord>,
    /// `(iteration, values in coords order)`.
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl TrajectoryTable {
    pub fn column(&self, coord: &ParamCoord) -> Option<Vec<f64>> {
        let j = self.coords.iter().position(|c| c == coord)?;
        Some(self.rows.iter().map(|(_, v)| v[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration");
        for c in &self.coords {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (t, values) in &self.rows {
            let _ = write!(out, "{t}");
            for v in values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trajectories of every coordinate along the winning lineage: the lineage
/// of the best successful trial of the last iteration in the log.
pub fn schedule_trajectory_stats(log: &ScheduleLog) -> Result<TrajectoryTable, LogError> {
    let last = log.records.iter().map(|r| r.iteration).max().ok_or(LogError::Empty)?;
    let best = log
        .records
        .iter()
        .filter(|r| r.iteration == last && r.metric.is_some())
        .fold(None, |best: Option<&crate::engine::TrialRecord>, r| match best {
            Some(b) if b.omega() >= r.omega() => Some(b),
            _ => Some(r),
        })
        .ok_or(LogError::Empty)?;
    lineage_trajectory(log, best.trial_ref())
}

pub fn lineage_trajectory(log: &ScheduleLog, trial: crate::engine::TrialRef) -> Result<TrajectoryTable, LogError> {
    let space = &log.header.config.space;
    let schedule = extract_schedule(log, trial)?;
    let coords = space.coords();
    let rows = schedule
        .steps
        .iter()
        .map(|s| (s.iteration, space.normalized(&s.policy)))
        .collect();
    Ok(TrajectoryTable {
        lineage_of: trial,
        coords,
        rows,
    })
}
