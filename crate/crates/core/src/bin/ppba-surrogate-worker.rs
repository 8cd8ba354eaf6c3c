//! Reference external worker serving the surrogate objective.
//!
//! Usage: `ppba-surrogate-worker [SPEC.json]`, or `ppba-surrogate-worker
//! --constant METRIC` for a stub whose every evaluation returns METRIC.
//! Without a spec file the worker serves the static target of seed
//! `PPBA_SURROGATE_SEED` (default 0) over the default space with horizon
//! `PPBA_SURROGATE_HORIZON` (default 1000).
//!
//! Environment:
//! - `PPBA_CHECKPOINT_DIR`: keep states as files there, shareable between
//!   workers; otherwise states live in memory.
//! - `PPBA_WORKER_CRASH_ON_TRAIN=N`: exit abruptly with code 101 on the
//!   N-th train request (1-based).

use std::io::{stdin, stdout};
use std::process::exit;
use std::sync::atomic::{AtomicU64, Ordering};

use ppba_core::harness::{SurrogateModel, SurrogateSpec};
use ppba_core::protocol::wire::{serve, DirectoryStore, MemoryStore, PROTOCOL_ENV, PROTOCOL_VERSION};
use ppba_core::protocol::{Model, TrainerError};
use ppba_core::rng::StreamId;
use ppba_core::space::{default_space, PolicyAssignment};

const EXIT_USAGE: i32 = 2;
const EXIT_CRASH: i32 = 101;

struct Constant(f64);

impl Model for Constant {
    type State = u64;

    fn init(&self, _seed: u64) -> u64 {
        0
    }

    fn train(&self, state: &mut u64, _: &PolicyAssignment, steps: u64, _: &StreamId) -> Result<(), TrainerError> {
        *state += steps;
        Ok(())
    }

    fn evaluate(&self, _state: &u64) -> f64 {
        self.0
    }
}

struct Crashing<M> {
    inner: M,
    crash_on: Option<u64>,
    trains: AtomicU64,
}

impl<M: Model> Model for Crashing<M> {
    type State = M::State;

    fn init(&self, seed: u64) -> M::State {
        self.inner.init(seed)
    }

    fn train(&self, state: &mut M::State, policy: &PolicyAssignment, steps: u64, stream: &StreamId) -> Result<(), TrainerError> {
        let n = self.trains.fetch_add(1, Ordering::SeqCst) + 1;
        if self.crash_on == Some(n) {
            eprintln!("ppba-surrogate-worker: crashing on train request {n}");
            exit(EXIT_CRASH);
        }
        self.inner.train(state, policy, steps, stream)
    }

    fn evaluate(&self, state: &M::State) -> f64 {
        self.inner.evaluate(state)
    }
}

fn env_u64(name: &str, default: u64) -> u64 {
    match std::env::var(name) {
        Ok(v) => v.parse().unwrap_or_else(|_| fail(&format!("{name} must be an integer, got `{v}`"))),
        Err(_) => default,
    }
}

fn fail(message: &str) -> ! {
    eprintln!("ppba-surrogate-worker: {message}");
    exit(EXIT_USAGE)
}

fn run<M>(model: M) -> i32
where
    M: Model,
    M::State: serde::Serialize + serde::de::DeserializeOwned,
{
    let crash_on = std::env::var("PPBA_WORKER_CRASH_ON_TRAIN").ok().map(|v| {
        v.parse()
            .unwrap_or_else(|_| fail(&format!("PPBA_WORKER_CRASH_ON_TRAIN must be an integer, got `{v}`")))
    });
    let model = Crashing {
        inner: model,
        crash_on,
        trains: AtomicU64::new(0),
    };
    let input = stdin().lock();
    let output = stdout().lock();
    match std::env::var_os("PPBA_CHECKPOINT_DIR") {
        Some(dir) => {
            let mut store = DirectoryStore::new(dir).unwrap_or_else(|e| fail(&format!("checkpoint directory: {e}")));
            serve(&model, &mut store, input, output)
        }
        None => serve(&model, &mut MemoryStore::default(), input, output),
    }
}

fn main() {
    if let Ok(v) = std::env::var(PROTOCOL_ENV) {
        if v != PROTOCOL_VERSION.to_string() {
            fail(&format!("engine speaks protocol {v}, this worker speaks {PROTOCOL_VERSION}"));
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match args.as_slice() {
        [flag, metric] if flag == "--constant" => {
            let m: f64 = metric
                .parse()
                .unwrap_or_else(|_| fail(&format!("--constant needs a number, got `{metric}`")));
            run(Constant(m))
        }
        [path] if !path.starts_with('-') => {
            let text = std::fs::read_to_string(path).unwrap_or_else(|e| fail(&format!("{path}: {e}")));
            let spec: SurrogateSpec = serde_json::from_str(&text).unwrap_or_else(|e| fail(&format!("{path}: {e}")));
            run(SurrogateModel { spec })
        }
        [] => {
            let seed = env_u64("PPBA_SURROGATE_SEED", 0);
            let horizon = env_u64("PPBA_SURROGATE_HORIZON", 1000);
            run(SurrogateModel {
                spec: SurrogateSpec::static_target(&default_space(), seed, horizon),
            })
        }
        _ => fail("usage: ppba-surrogate-worker [SPEC.json | --constant METRIC]"),
    };
    exit(code);
}
