//! Client side of the worker protocol: one child process per slot, one
//! request in flight per process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{decode_response, Request, RequestEnvelope, ResponseBody, PROTOCOL_ENV, PROTOCOL_VERSION};
use super::{StateToken, Trainer, TrainerError};
use crate::rng::StreamId;
use crate::space::PolicyAssignment;

pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: Vec<(String, String)>,
    /// Per-call timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Number of worker processes; tokens must then be shareable between
    /// workers (e.g. through a common checkpoint directory).
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_timeout_secs() -> f64 {
    DEFAULT_CALL_TIMEOUT.as_secs_f64()
}

fn default_workers() -> usize {
    1
}

impl WorkerCommand {
    pub fn new(program: impl Into<String>) -> Self {
        WorkerCommand {
            program: program.into(),
            args: Vec::new(),
            env: Vec::new(),
            timeout_secs: default_timeout_secs(),
            workers: 1,
        }
    }

    /// Splits a shell-like command line on whitespace.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        let mut cmd = WorkerCommand::new(program);
        cmd.args = parts.collect();
        Some(cmd)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

struct WorkerProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl WorkerProcess {
    fn spawn(cmd: &WorkerCommand) -> Result<Self, TrainerError> {
        let mut command = Command::new(&cmd.program);
        command
            .args(&cmd.args)
            .env(PROTOCOL_ENV, PROTOCOL_VERSION.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        for (k, v) in &cmd.env {
            command.env(k, v);
        }
        let mut child = command
            .spawn()
            .map_err(|e| TrainerError::Launch(format!("{}: {e}", cmd.program)))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(WorkerProcess {
            child,
            stdin,
            lines: rx,
        })
    }

    fn call(&mut self, id: u64, request: Request, timeout: Duration) -> Result<ResponseBody, TrainerError> {
        let envelope = RequestEnvelope { id, request };
        let line = serde_json::to_string(&envelope).expect("request serializes");
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| TrainerError::Crashed(format!("write failed: {e}")))?;
        loop {
            let line = match self.lines.recv_timeout(timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(TrainerError::Crashed(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(TrainerError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.try_wait().ok().flatten();
                    return Err(TrainerError::Crashed(match status {
                        Some(s) => format!("worker exited with {s}"),
                        None => "worker closed its output".to_string(),
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp = decode_response(&line)?;
            if resp.id != id {
                return Err(TrainerError::Protocol(format!(
                    "response id {} does not match request id {id}",
                    resp.id
                )));
            }
            return Ok(resp.body);
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A [`Trainer`] backed by external worker processes.
///
/// A crashed, timed-out or misbehaving worker is killed and the call fails;
/// the next call on that slot starts a fresh process.
pub struct ExternalTrainer {
    command: WorkerCommand,
    slots: Vec<Mutex<Option<WorkerProcess>>>,
    next_id: AtomicU64,
    next_slot: AtomicUsize,
}

/// Launches the worker(s) and performs the version handshake.
pub fn spawn_external_worker(command: WorkerCommand) -> Result<ExternalTrainer, TrainerError> {
    let n = command.workers.max(1);
    let trainer = ExternalTrainer {
        slots: (0..n).map(|_| Mutex::new(None)).collect(),
        command,
        next_id: AtomicU64::new(0),
        next_slot: AtomicUsize::new(0),
    };
    for slot in &trainer.slots {
        let mut guard = slot.lock().expect("worker slot poisoned");
        *guard = Some(trainer.start()?);
    }
    Ok(trainer)
}

impl ExternalTrainer {
    pub fn command(&self) -> &WorkerCommand {
        &self.command
    }

    fn start(&self) -> Result<WorkerProcess, TrainerError> {
        let mut proc = WorkerProcess::spawn(&self.command)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        match proc.call(id, Request::Hello { version: PROTOCOL_VERSION }, self.command.timeout()) {
            Ok(ResponseBody::Ok { version: Some(v), .. }) if v == PROTOCOL_VERSION => Ok(proc),
            Ok(ResponseBody::Ok { version, .. }) => {
                proc.kill();
                Err(TrainerError::Protocol(format!(
                    "handshake answered version {version:?}, expected {PROTOCOL_VERSION}"
                )))
            }
            Ok(ResponseBody::Error { message }) => {
                proc.kill();
                Err(TrainerError::Protocol(format!("handshake rejected: {message}")))
            }
            Err(e) => {
                proc.kill();
                Err(e)
            }
        }
    }

    fn call(&self, request: Request) -> Result<ResponseBody, TrainerError> {
        let n = self.slots.len();
        let start = self.next_slot.fetch_add(1, Ordering::Relaxed) % n;
        // Prefer an idle slot; otherwise queue on the round-robin one.
        let mut guard = (0..n)
            .find_map(|k| self.slots[(start + k) % n].try_lock().ok())
            .unwrap_or_else(|| self.slots[start].lock().expect("worker slot poisoned"));
        if guard.is_none() {
            *guard = Some(self.start()?);
        }
        let proc = guard.as_mut().expect("worker present");
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        match proc.call(id, request, self.command.timeout()) {
            Ok(ResponseBody::Error { message }) => Err(TrainerError::Remote(message)),
            Ok(body) => Ok(body),
            Err(e) => {
                proc.kill();
                *guard = None;
                Err(e)
            }
        }
    }

    fn expect_token(body: ResponseBody) -> Result<StateToken, TrainerError> {
        match body {
            ResponseBody::Ok { token: Some(t), .. } => Ok(t),
            other => Err(TrainerError::Protocol(format!("expected a token, got {other:?}"))),
        }
    }

    /// Sends `shutdown` to every live worker and waits for it to exit.
    pub fn shutdown(&self) {
        for slot in &self.slots {
            let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(mut proc) = guard.take() {
                let id = self.next_id.fetch_add(1, Ordering::Relaxed);
                if proc.call(id, Request::Shutdown, Duration::from_secs(10)).is_ok() {
                    let _ = proc.child.wait();
                } else {
                    proc.kill();
                }
            }
        }
    }
}

impl Drop for ExternalTrainer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Trainer for ExternalTrainer {
    fn init(&self, seed: u64) -> Result<StateToken, TrainerError> {
        Self::expect_token(self.call(Request::Init { seed })?)
    }

    fn train(
        &self,
        token: &StateToken,
        policy: &PolicyAssignment,
        steps: u64,
        stream: &StreamId,
    ) -> Result<StateToken, TrainerError> {
        Self::expect_token(self.call(Request::Train {
            token: token.clone(),
            policy: policy.clone(),
            steps,
            stream: stream.clone(),
        })?)
    }

    fn evaluate(&self, token: &StateToken) -> Result<f64, TrainerError> {
        match self.call(Request::Evaluate { token: token.clone() })? {
            ResponseBody::Ok { metric: Some(m), .. } if !m.is_nan() => Ok(m),
            other => Err(TrainerError::Protocol(format!("expected a metric, got {other:?}"))),
        }
    }

    fn fork(&self, token: &StateToken) -> Result<StateToken, TrainerError> {
        Self::expect_token(self.call(Request::Fork { token: token.clone() })?)
    }

    fn release(&self, token: &StateToken) -> Result<(), TrainerError> {
        self.call(Request::Release { token: token.clone() }).map(|_| ())
    }
}
