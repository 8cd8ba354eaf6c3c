//! Exploit (compete) and explore (subset selection + mutation) steps, and
//! the per-operation table of best historical parameters.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::TrialRef;
use crate::augment::OpKind;
use crate::rng::RandomStream;
use crate::space::{OpValues, SearchSpace, SpaceError};

/// Best-known values per operation, with the metric of the trial that
/// produced them. Only trials that were actively exploring an operation
/// update its entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoricalOpParams {
    pub entries: BTreeMap<OpKind, HistoricalEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricalEntry {
    pub values: OpValues,
    pub metric: f64,
    pub source: TrialRef,
}

impl HistoricalOpParams {
    /// Records `metric` for each explored op if it beats the stored one.
    /// Returns the ops whose entry changed.
    pub fn update(
        &mut self,
        explored: &[OpKind],
        values: &BTreeMap<OpKind, OpValues>,
        metric: f64,
        source: TrialRef,
    ) -> Vec<OpKind> {
        let mut changed = Vec::new();
        if !metric.is_finite() {
            return changed;
        }
        for op in explored {
            let better = self.entries.get(op).is_none_or(|e| metric > e.metric);
            if better {
                if let Some(v) = values.get(op) {
                    self.entries.insert(
                        *op,
                        HistoricalEntry {
                            values: v.clone(),
                            metric,
                            source,
                        },
                    );
                    changed.push(*op);
                }
            }
        }
        changed
    }

    pub fn get(&self, op: OpKind) -> Option<&HistoricalEntry> {
        self.entries.get(&op)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Returns the index into `candidates` of the winner between the incumbent
/// (`None`) and the best of `rival_count` uniform draws from `candidates`.
/// Rivals must be strictly better to win.
pub fn compete(
    incumbent_metric: f64,
    candidates: &[f64],
    rival_count: usize,
    rng: &mut RandomStream,
) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let mut best: Option<usize> = None;
    for _ in 0..rival_count.max(1) {
        let i = rng.index(candidates.len());
        if best.is_none_or(|b| candidates[i] > candidates[b]) {
            best = Some(i);
        }
    }
    best.filter(|&b| candidates[b] > incumbent_metric)
}

/// Where a successor's values for one selected op came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreBranch {
    /// Mutated from the winner's explored values.
    Winner,
    /// Mutated from the best historical values of the op.
    Historical,
    /// Freshly sampled.
    Random,
}

/// Overlap between the winner's explored subset and the successor's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetScenario {
    Same,
    PartiallyShared,
    Unshared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExploreOutcome {
    /// Sorted in execution order.
    pub explored: Vec<OpKind>,
    pub values: BTreeMap<OpKind, OpValues>,
    pub kept_subset: bool,
    pub scenario: SubsetScenario,
    pub branches: Vec<(OpKind, ExploreBranch)>,
}

/// Uniform `k`-subset of the enabled ops, returned in execution order.
pub fn random_subset(space: &SearchSpace, k: usize, rng: &mut RandomStream) -> Vec<OpKind> {
    let enabled = space.enabled_ops();
    let mut picked: Vec<OpKind> = sample(rng, enabled.len(), k)
        .into_iter()
        .map(|i| enabled[i])
        .collect();
    picked.sort();
    picked
}

/// Chooses the successor's explored subset and its starting values.
///
/// With probability `exploration_rate` the winner's subset is kept,
/// otherwise a fresh uniform subset of `num_ops` enabled ops is drawn. Each
/// selected op is then mutated from the winner's values if the winner
/// explored it, else mutated from the historical best if one exists, else
/// sampled at random.
pub fn explore(
    winner: &BTreeMap<OpKind, OpValues>,
    historical: Option<&HistoricalOpParams>,
    space: &SearchSpace,
    num_ops: usize,
    exploration_rate: f64,
    rng: &mut RandomStream,
) -> Result<ExploreOutcome, SpaceError> {
    let keep = rng.uniform() < exploration_rate;
    let explored: Vec<OpKind> = if keep {
        winner.keys().copied().collect()
    } else {
        random_subset(space, num_ops, rng)
    };
    let winner_set: BTreeSet<OpKind> = winner.keys().copied().collect();
    let shared = explored.iter().filter(|op| winner_set.contains(op)).count();
    let scenario = if shared == explored.len() && shared == winner_set.len() {
        SubsetScenario::Same
    } else if shared == 0 {
        SubsetScenario::Unshared
    } else {
        SubsetScenario::PartiallyShared
    };

    let mut values = BTreeMap::new();
    let mut branches = Vec::with_capacity(explored.len());
    for &op in &explored {
        let (v, branch) = if let Some(parent) = winner.get(&op) {
            (space.mutate_op(op, parent, rng)?, ExploreBranch::Winner)
        } else if let Some(entry) = historical.and_then(|h| h.get(op)) {
            (space.mutate_op(op, &entry.values, rng)?, ExploreBranch::Historical)
        } else {
            (space.sample_op(op, rng), ExploreBranch::Random)
        };
        values.insert(op, v);
        branches.push((op, branch));
    }
    Ok(ExploreOutcome {
        explored,
        values,
        kept_subset: keep,
        scenario,
        branches,
    })
}
