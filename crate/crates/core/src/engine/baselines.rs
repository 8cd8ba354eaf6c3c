//! Comparison baselines: full-space population search and random search.

use serde::{Deserialize, Serialize};

use super::{parallel_map, run_search_with, EngineError, RunOptions, SearchConfig, SearchResult};
use crate::protocol::{Trainer, TrainerError};
use crate::rng::StreamId;
use crate::space::{sample_random, PolicyAssignment, SearchSpace};

/// Population search that mutates every enabled op at every iteration and
/// never adopts historical values.
pub fn run_pba_baseline<T: Trainer + ?Sized>(
    config: &SearchConfig,
    trainer: &T,
    options: RunOptions<'_>,
) -> Result<SearchResult, EngineError> {
    run_search_with(&pba_config(config), trainer, options)
}

/// `config` with `num_ops` set to the enabled-op count and historical
/// adoption off.
pub fn pba_config(config: &SearchConfig) -> SearchConfig {
    let mut c = config.clone();
    c.num_ops = c.space.enabled_ops().len();
    c.use_historical = false;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSearchConfig {
    pub num_policies: usize,
    /// Each policy is trained in the same chunks as a search trial.
    pub num_iterations: usize,
    pub steps_first_iteration: u64,
    pub steps_per_iteration: u64,
    pub seed: u64,
    #[serde(default)]
    pub space: SearchSpace,
}

impl RandomSearchConfig {
    /// Same per-policy training length as one trial of `search`.
    pub fn matching(search: &SearchConfig, num_policies: usize) -> Self {
        RandomSearchConfig {
            num_policies,
            num_iterations: search.num_iterations,
            steps_first_iteration: search.steps_first_iteration,
            steps_per_iteration: search.steps_per_iteration,
            seed: search.seed,
            space: search.space.clone(),
        }
    }

    pub fn steps_per_policy(&self) -> u64 {
        self.steps_first_iteration + self.steps_per_iteration * (self.num_iterations.max(1) as u64 - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomEvaluation {
    pub index: usize,
    pub policy: PolicyAssignment,
    /// `None` when training failed.
    pub metric: Option<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    pub evaluations: Vec<RandomEvaluation>,
    pub total_steps: u64,
}

impl RandomSearchResult {
    /// Highest metric; ties go to the lowest index.
    pub fn best(&self) -> Option<&RandomEvaluation> {
        self.evaluations
            .iter()
            .filter(|e| e.metric.is_some())
            .fold(None, |best: Option<&RandomEvaluation>, e| match best {
                Some(b) if b.metric >= e.metric => Some(b),
                _ => Some(e),
            })
    }
}

/// Trains `num_policies` independently sampled constant policies from fresh
/// states and evaluates each once at the end.
pub fn run_random_search<T: Trainer + ?Sized>(
    config: &RandomSearchConfig,
    trainer: &T,
    threads: Option<usize>,
) -> Result<RandomSearchResult, EngineError> {
    if config.num_policies == 0 {
        return Err(EngineError::Config {
            field: "num_policies",
            message: "must be at least 1".into(),
        });
    }
    if config.num_iterations == 0 {
        return Err(EngineError::Config {
            field: "num_iterations",
            message: "must be at least 1".into(),
        });
    }
    config.space.check()?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let root = StreamId::root(config.seed).child("random");
    let evaluations = parallel_map(config.num_policies, threads, |k| {
        let base = root.indexed("policy", k);
        let mut rng = base.stream();
        let seed = rng.next_seed();
        let policy = sample_random(&config.space, &mut rng);
        let (metric, steps) = train_constant(trainer, config, &base, seed, &policy);
        if let Err(e) = &metric {
            ::log::warn!("random policy {k} failed: {e}");
        }
        RandomEvaluation {
            index: k,
            policy,
            metric: metric.ok(),
            steps,
        }
    });
    let total_steps = evaluations.iter().map(|e| e.steps).sum();
    Ok(RandomSearchResult {
        evaluations,
        total_steps,
    })
}

fn train_constant<T: Trainer + ?Sized>(
    trainer: &T,
    config: &RandomSearchConfig,
    base: &StreamId,
    seed: u64,
    policy: &PolicyAssignment,
) -> (Result<f64, TrainerError>, u64) {
    let token = match trainer.init(seed) {
        Ok(t) => t,
        Err(e) => return (Err(e), 0),
    };
    let mut steps = 0;
    let mut run = || {
        for t in 0..config.num_iterations {
            let n = if t == 0 {
                config.steps_first_iteration
            } else {
                config.steps_per_iteration
            };
            trainer.train(&token, policy, n, &base.indexed("iter", t))?;
            steps += n;
        }
        trainer.evaluate(&token)
    };
    let metric = run();
    let _ = trainer.release(&token);
    (metric, steps)
}
