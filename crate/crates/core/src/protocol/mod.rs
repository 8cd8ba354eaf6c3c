//! The boundary between the search engine and the model being trained.
//!
//! The engine only ever talks to a [`Trainer`]: opaque state tokens that can
//! be initialized, trained under a policy, evaluated, forked (checkpoint
//! copy) and released. [`InProcessTrainer`] adapts any pure [`Model`];
//! [`ExternalTrainer`] drives child processes over the line-delimited
//! protocol in [`wire`].

mod external;
pub mod wire;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::rng::StreamId;
use crate::space::PolicyAssignment;

pub use external::{spawn_external_worker, ExternalTrainer, WorkerCommand, DEFAULT_CALL_TIMEOUT};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateToken(pub String);

impl fmt::Display for StateToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainerError {
    #[error("unknown state token `{0}`")]
    UnknownToken(StateToken),
    #[error("failed to launch worker: {0}")]
    Launch(String),
    #[error("worker protocol violation: {0}")]
    Protocol(String),
    #[error("worker call timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("worker exited: {0}")]
    Crashed(String),
    #[error("worker reported an error: {0}")]
    Remote(String),
    #[error("training failed: {0}")]
    Training(String),
}

/// Contract every trainer honours:
///
/// * `fork` returns a token whose later training never affects the original.
/// * `evaluate` does not change the state.
pub trait Trainer: Send + Sync {
    fn init(&self, seed: u64) -> Result<StateToken, TrainerError>;

    /// Trains for `steps` steps under `policy`. Any randomness the trainer
    /// needs (augmentation, batching) must come from `stream` so that a
    /// schedule replay reproduces the run.
    fn train(
        &self,
        token: &StateToken,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<StateToken, TrainerError>;

    fn evaluate(&self, token: &StateToken) -> Result<f64, TrainerError>;

    fn fork(&self, token: &StateToken) -> Result<StateToken, TrainerError>;

    fn release(&self, token: &StateToken) -> Result<(), TrainerError>;
}

impl<T: Trainer + ?Sized> Trainer for &T {
    fn init(&self, seed: u64) -> Result<StateToken, TrainerError> {
        (**self).init(seed)
    }
    fn train(
        &self,
        token: &StateToken,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<StateToken, TrainerError> {
        (**self).train(token, policy, steps, stream)
    }
    fn evaluate(&self, token: &StateToken) -> Result<f64, TrainerError> {
        (**self).evaluate(token)
    }
    fn fork(&self, token: &StateToken) -> Result<StateToken, TrainerError> {
        (**self).fork(token)
    }
    fn release(&self, token: &StateToken) -> Result<(), TrainerError> {
        (**self).release(token)
    }
}

impl<T: Trainer + ?Sized> Trainer for Box<T> {
    fn init(&self, seed: u64) -> Result<StateToken, TrainerError> {
        (**self).init(seed)
    }
    fn train(
        &self,
        token: &StateToken,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<StateToken, TrainerError> {
        (**self).train(token, policy, steps, stream)
    }
    fn evaluate(&self, token: &StateToken) -> Result<f64, TrainerError> {
        (**self).evaluate(token)
    }
    fn fork(&self, token: &StateToken) -> Result<StateToken, TrainerError> {
        (**self).fork(token)
    }
    fn release(&self, token: &StateToken) -> Result<(), TrainerError> {
        (**self).release(token)
    }
}

/// A model whose whole state is a plain value.
pub trait Model: Send + Sync {
    type State: Clone + Send;

    fn init(&self, seed: u64) -> Self::State;

    fn train(
        &self,
        state: &mut Self::State,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<(), TrainerError>;

    fn evaluate(&self, state: &Self::State) -> f64;
}

/// Token store over a [`Model`]; fork is a value copy. Training happens
/// outside the store lock, so distinct tokens train concurrently.
pub struct InProcessTrainer<M: Model> {
    model: M,
    states: Mutex<HashMap<u64, M::State>>,
    next: AtomicU64,
}

impl<M: Model> InProcessTrainer<M> {
    pub fn new(model: M) -> Self {
        InProcessTrainer {
            model,
            states: Mutex::new(HashMap::new()),
            next: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn live_tokens(&self) -> usize {
        self.states.lock().expect("state store poisoned").len()
    }

    fn insert(&self, state: M::State) -> StateToken {
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        self.states.lock().expect("state store poisoned").insert(id, state);
        StateToken(format!("s{id}"))
    }

    fn key(token: &StateToken) -> Result<u64, TrainerError> {
        token
            .0
            .strip_prefix('s')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| TrainerError::UnknownToken(token.clone()))
    }

    fn snapshot(&self, token: &StateToken) -> Result<M::State, TrainerError> {
        let key = Self::key(token)?;
        self.states
            .lock()
            .expect("state store poisoned")
            .get(&key)
            .cloned()
            .ok_or_else(|| TrainerError::UnknownToken(token.clone()))
    }
}

impl<M: Model> Trainer for InProcessTrainer<M> {
    fn init(&self, seed: u64) -> Result<StateToken, TrainerError> {
        Ok(self.insert(self.model.init(seed)))
    }

    fn train(
        &self,
        token: &StateToken,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<StateToken, TrainerError> {
        let mut state = self.snapshot(token)?;
        self.model.train(&mut state, policy, steps, stream)?;
        let key = Self::key(token)?;
        self.states.lock().expect("state store poisoned").insert(key, state);
        Ok(token.clone())
    }

    fn evaluate(&self, token: &StateToken) -> Result<f64, TrainerError> {
        let key = Self::key(token)?;
        let states = self.states.lock().expect("state store poisoned");
        let state = states
            .get(&key)
            .ok_or_else(|| TrainerError::UnknownToken(token.clone()))?;
        Ok(self.model.evaluate(state))
    }

    fn fork(&self, token: &StateToken) -> Result<StateToken, TrainerError> {
        let state = self.snapshot(token)?;
        Ok(self.insert(state))
    }

    fn release(&self, token: &StateToken) -> Result<(), TrainerError> {
        let key = Self::key(token)?;
        self.states
            .lock()
            .expect("state store poisoned")
            .remove(&key)
            .map(|_| ())
            .ok_or_else(|| TrainerError::UnknownToken(token.clone()))
    }
}
