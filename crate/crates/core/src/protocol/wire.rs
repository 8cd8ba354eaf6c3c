//! Line-delimited JSON messages between the engine and an external worker.
//!
//! Each line is one JSON object. Requests carry a correlation `id` and an
//! `op`; every request receives exactly one response with the same `id` and
//! a `status` of `ok` or `error`.
//!
//! ```text
//! -> {"id":0,"op":"hello","version":1}
//! <- {"id":0,"status":"ok","version":1}
//! -> {"id":1,"op":"init","seed":42}
//! <- {"id":1,"status":"ok","token":"ck-1"}
//! -> {"id":2,"op":"train","token":"ck-1","policy":{...},"steps":100,"stream":{"seed":7,"path":"train/iter=0/trial=3"}}
//! <- {"id":2,"status":"ok","token":"ck-1"}
//! -> {"id":3,"op":"evaluate","token":"ck-1"}
//! <- {"id":3,"status":"ok","metric":0.73}
//! -> {"id":4,"op":"fork","token":"ck-1"}
//! <- {"id":4,"status":"ok","token":"ck-2"}
//! -> {"id":5,"op":"release","token":"ck-2"}
//! <- {"id":5,"status":"ok"}
//! -> {"id":6,"op":"shutdown"}
//! <- {"id":6,"status":"ok"}            (worker then exits with code 0)
//! ```
//!
//! The hello exchange is always first; a worker that does not speak
//! [`PROTOCOL_VERSION`] must answer with an error. The version is also
//! exported to the worker as `PPBA_WORKER_PROTOCOL`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Model, StateToken, TrainerError};
use crate::rng::StreamId;
use crate::space::PolicyAssignment;

pub const PROTOCOL_VERSION: u32 = 1;
pub const PROTOCOL_ENV: &str = "PPBA_WORKER_PROTOCOL";

/// Exit code of a worker that shut down on request.
pub const EXIT_CLEAN: i32 = 0;
/// Exit code of a worker that stopped on a protocol violation.
pub const EXIT_PROTOCOL: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello {
        version: u32,
    },
    Init {
        seed: u64,
    },
    Train {
        token: StateToken,
        policy: PolicyAssignment,
        steps: u64,
        stream: StreamId,
    },
    Evaluate {
        token: StateToken,
    },
    Fork {
        token: StateToken,
    },
    Release {
        token: StateToken,
    },
    Shutdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    pub id: u64,
    #[serde(flatten)]
    pub request: Request,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResponseBody {
    Ok {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<StateToken>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<u32>,
    },
    Error {
        message: String,
    },
}

impl ResponseBody {
    pub fn ok() -> Self {
        ResponseBody::Ok {
            token: None,
            metric: None,
            version: None,
        }
    }

    pub fn token(t: StateToken) -> Self {
        ResponseBody::Ok {
            token: Some(t),
            metric: None,
            version: None,
        }
    }

    pub fn metric(m: f64) -> Self {
        ResponseBody::Ok {
            token: None,
            metric: Some(m),
            version: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ResponseBody::Error {
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(flatten)]
    pub body: ResponseBody,
}

/// Storage for worker-side states. The in-memory store loses everything
/// when the process dies; the directory store keeps one JSON checkpoint
/// file per token so a restarted worker can pick up where it left off.
pub trait CheckpointStore<S> {
    fn put(&mut self, token: &StateToken, state: &S) -> Result<(), String>;
    fn get(&mut self, token: &StateToken) -> Result<S, String>;
    fn remove(&mut self, token: &StateToken) -> Result<(), String>;
    fn fresh_token(&mut self) -> StateToken;
}

pub struct MemoryStore<S> {
    states: std::collections::HashMap<StateToken, S>,
    next: u64,
}

impl<S> Default for MemoryStore<S> {
    fn default() -> Self {
        MemoryStore {
            states: std::collections::HashMap::new(),
            next: 0,
        }
    }
}

impl<S: Clone> CheckpointStore<S> for MemoryStore<S> {
    fn put(&mut self, token: &StateToken, state: &S) -> Result<(), String> {
        self.states.insert(token.clone(), state.clone());
        Ok(())
    }
    fn get(&mut self, token: &StateToken) -> Result<S, String> {
        self.states
            .get(token)
            .cloned()
            .ok_or_else(|| format!("unknown token `{token}`"))
    }
    fn remove(&mut self, token: &StateToken) -> Result<(), String> {
        self.states
            .remove(token)
            .map(|_| ())
            .ok_or_else(|| format!("unknown token `{token}`"))
    }
    fn fresh_token(&mut self) -> StateToken {
        self.next += 1;
        StateToken(format!("m{}", self.next))
    }
}

pub struct DirectoryStore {
    dir: std::path::PathBuf,
    prefix: String,
    next: u64,
}

impl DirectoryStore {
    pub fn new(dir: impl Into<std::path::PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DirectoryStore {
            dir,
            prefix: format!("ck{}", std::process::id()),
            next: 0,
        })
    }

    fn path(&self, token: &StateToken) -> Result<std::path::PathBuf, String> {
        if token.0.is_empty() || !token.0.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(format!("malformed token `{token}`"));
        }
        Ok(self.dir.join(format!("{}.json", token.0)))
    }
}

impl<S: Serialize + serde::de::DeserializeOwned> CheckpointStore<S> for DirectoryStore {
    fn put(&mut self, token: &StateToken, state: &S) -> Result<(), String> {
        let path = self.path(token)?;
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(state).map_err(|e| e.to_string())?;
        std::fs::write(&tmp, bytes).map_err(|e| e.to_string())?;
        std::fs::rename(&tmp, &path).map_err(|e| e.to_string())
    }
    fn get(&mut self, token: &StateToken) -> Result<S, String> {
        let path = self.path(token)?;
        let bytes = std::fs::read(&path).map_err(|_| format!("unknown token `{token}`"))?;
        serde_json::from_slice(&bytes).map_err(|e| e.to_string())
    }
    fn remove(&mut self, token: &StateToken) -> Result<(), String> {
        let path = self.path(token)?;
        std::fs::remove_file(path).map_err(|_| format!("unknown token `{token}`"))
    }
    fn fresh_token(&mut self) -> StateToken {
        self.next += 1;
        StateToken(format!("{}-{}", self.prefix, self.next))
    }
}

/// Outcome of serving one request.
pub enum Served {
    Continue,
    Shutdown,
}

/// Handles one request against `model` and `store`.
pub fn handle_request<M, St>(model: &M, store: &mut St, request: Request) -> (ResponseBody, Served)
where
    M: Model,
    St: CheckpointStore<M::State>,
{
    let body = match request {
        Request::Hello { version } => {
            if version == PROTOCOL_VERSION {
                ResponseBody::Ok {
                    token: None,
                    metric: None,
                    version: Some(PROTOCOL_VERSION),
                }
            } else {
                ResponseBody::error(format!("unsupported protocol version {version}"))
            }
        }
        Request::Init { seed } => {
            let token = store.fresh_token();
            match store.put(&token, &model.init(seed)) {
                Ok(()) => ResponseBody::token(token),
                Err(e) => ResponseBody::error(e),
            }
        }
        Request::Train {
            token,
            policy,
            steps,
            stream,
        } => {
            let result = store.get(&token).and_then(|mut state| {
                model
                    .train(&mut state, &policy, steps, &stream)
                    .map_err(|e| e.to_string())?;
                store.put(&token, &state)
            });
            match result {
                Ok(()) => ResponseBody::token(token),
                Err(e) => ResponseBody::error(e),
            }
        }
        Request::Evaluate { token } => match store.get(&token) {
            Ok(state) => ResponseBody::metric(model.evaluate(&state)),
            Err(e) => ResponseBody::error(e),
        },
        Request::Fork { token } => {
            let fresh = store.fresh_token();
            match store.get(&token).and_then(|s| store.put(&fresh, &s)) {
                Ok(()) => ResponseBody::token(fresh),
                Err(e) => ResponseBody::error(e),
            }
        }
        Request::Release { token } => match store.remove(&token) {
            Ok(()) => ResponseBody::ok(),
            Err(e) => ResponseBody::error(e),
        },
        Request::Shutdown => return (ResponseBody::ok(), Served::Shutdown),
    };
    (body, Served::Continue)
}

/// Worker-side loop: reads requests from `input`, answers on `output`.
/// Returns the process exit code the worker should use.
pub fn serve<M, St, R, W>(model: &M, store: &mut St, input: R, mut output: W) -> i32
where
    M: Model,
    St: CheckpointStore<M::State>,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let Ok(line) = line else {
            return EXIT_PROTOCOL;
        };
        if line.trim().is_empty() {
            continue;
        }
        let envelope: RequestEnvelope = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(e) => {
                let resp = Response {
                    id: u64::MAX,
                    body: ResponseBody::error(format!("malformed request: {e}")),
                };
                let _ = writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"));
                let _ = output.flush();
                return EXIT_PROTOCOL;
            }
        };
        let (body, served) = handle_request(model, store, envelope.request);
        let resp = Response {
            id: envelope.id,
            body,
        };
        if writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes")).is_err()
            || output.flush().is_err()
        {
            return EXIT_PROTOCOL;
        }
        if let Served::Shutdown = served {
            return EXIT_CLEAN;
        }
    }
    EXIT_CLEAN
}

pub(crate) fn decode_response(line: &str) -> Result<Response, TrainerError> {
    serde_json::from_str(line).map_err(|e| TrainerError::Protocol(format!("malformed response `{line}`: {e}")))
}
