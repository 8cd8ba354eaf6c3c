//! Append-only schedule log: one JSON header line, then one JSON record per
//! evaluated trial.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{SearchConfig, TrialRef};
use crate::augment::OpKind;
use crate::protocol::{Trainer, TrainerError};
use crate::rng::StreamId;
use crate::space::PolicyAssignment;

pub const LOG_FORMAT: &str = "ppba-schedule-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub config: SearchConfig,
}

impl LogHeader {
    pub fn new(config: &SearchConfig) -> Self {
        LogHeader {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            config: config.clone(),
        }
    }
}

/// How a trial's starting state was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Fresh trainer state from `init_seed`.
    Init,
    /// Continued its own lineage (won or tied its compete).
    Continue,
    /// Took over a strictly better rival's state and policy, then explored.
    Exploit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iteration: usize,
    pub trial: usize,
    pub origin: Origin,
    /// Trial whose end-of-iteration state this trial started from.
    pub parent: Option<TrialRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
    pub explored_ops: Vec<OpKind>,
    pub policy: PolicyAssignment,
    pub steps: u64,
    pub train_stream: StreamId,
    /// `None` marks a failed trial (metric treated as negative infinity).
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn trial_ref(&self) -> TrialRef {
        TrialRef {
            iteration: self.iteration,
            trial: self.trial,
        }
    }

    /// Metric with failures mapped to negative infinity.
    pub fn omega(&self) -> f64 {
        self.metric.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LogError {
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log is empty")]
    Empty,
    #[error("unsupported log format `{format}` version {version}")]
    Format { format: String, version: u32 },
    #[error("integrity error at record {index}: {message}")]
    Integrity { index: usize, message: String },
    #[error("no record for trial {0}")]
    MissingRecord(TrialRef),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleLog {
    pub header: LogHeader,
    pub records: Vec<TrialRecord>,
}

impl ScheduleLog {
    pub fn new(config: &SearchConfig) -> Self {
        ScheduleLog {
            header: LogHeader::new(config),
            records: Vec::new(),
        }
    }

    pub fn find(&self, r: TrialRef) -> Option<&TrialRecord> {
        self.records.iter().find(|x| x.trial_ref() == r)
    }

    /// Highest-metric successful record; ties go to the earliest record.
    pub fn best(&self) -> Option<&TrialRecord> {
        self.records
            .iter()
            .filter(|r| r.metric.is_some())
            .fold(None, |best: Option<&TrialRecord>, r| match best {
                Some(b) if b.omega() >= r.omega() => Some(b),
                _ => Some(r),
            })
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&self.header).expect("header serializes")
    }

    pub fn record_line(record: &TrialRecord) -> String {
        serde_json::to_string(record).expect("record serializes")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header_line())?;
        for r in &self.records {
            writeln!(w, "{}", Self::record_line(r))?;
        }
        w.flush()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 log")
    }

    /// Parses a log and checks it: header format, no duplicate records,
    /// every parent present and earlier, iterations in order.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut lines = r.lines().enumerate();
        let header: LogHeader = loop {
            match lines.next() {
                None => return Err(LogError::Empty),
                Some((i, line)) => {
                    let line = line.map_err(|e| LogError::Io(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| LogError::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                }
            }
        };
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(LogError::Format {
                format: header.format,
                version: header.version,
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| LogError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrialRecord = serde_json::from_str(&line).map_err(|e| LogError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        let log = ScheduleLog { header, records };
        log.check_integrity()?;
        Ok(log)
    }

    pub fn from_text(text: &str) -> Result<Self, LogError> {
        Self::read_from(text.as_bytes())
    }

    pub fn check_integrity(&self) -> Result<(), LogError> {
        let mut seen = std::collections::HashSet::new();
        let mut last_iter = 0;
        for (index, r) in self.records.iter().enumerate() {
            if r.iteration < last_iter {
                return Err(LogError::Integrity {
                    index,
                    message: format!("iteration {} after iteration {last_iter}", r.iteration),
                });
            }
            last_iter = r.iteration;
            if !seen.insert(r.trial_ref()) {
                return Err(LogError::Integrity {
                    index,
                    message: format!("duplicate record for trial {}", r.trial_ref()),
                });
            }
            match (r.parent, r.origin) {
                (None, Origin::Init) => {
                    if r.init_seed.is_none() {
                        return Err(LogError::Integrity {
                            index,
                            message: "init record without init_seed".into(),
                        });
                    }
                }
                (Some(p), Origin::Continue | Origin::Exploit) => {
                    if !seen.contains(&p) || p.iteration >= r.iteration {
                        return Err(LogError::Integrity {
                            index,
                            message: format!("parent {p} missing or not earlier"),
                        });
                    }
                }
                _ => {
                    return Err(LogError::Integrity {
                        index,
                        message: "origin and parent disagree".into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// One step of an extracted schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub iteration: usize,
    pub trial: usize,
    pub policy: PolicyAssignment,
    pub steps: u64,
    pub train_stream: StreamId,
}

/// A trial's full lineage from a fresh state: what it was trained on, in
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub init_seed: u64,
    pub steps: Vec<ScheduleStep>,
}

impl Schedule {
    pub fn policies(&self) -> Vec<&PolicyAssignment> {
        self.steps.iter().map(|s| &s.policy).collect()
    }

    pub fn total_steps(&self) -> u64 {
        self.steps.iter().map(|s| s.steps).sum()
    }
}

/// Walks parent links from `trial` back to its fresh-state ancestor.
pub fn extract_schedule(log: &ScheduleLog, trial: TrialRef) -> Result<Schedule, LogError> {
    let mut chain = Vec::new();
    let mut cursor = Some(trial);
    let mut init_seed = None;
    while let Some(r) = cursor {
        let rec = log.find(r).ok_or(LogError::MissingRecord(r))?;
        chain.push(ScheduleStep {
            iteration: rec.iteration,
            trial: rec.trial,
            policy: rec.policy.clone(),
            steps: rec.steps,
            train_stream: rec.train_stream.clone(),
        });
        if rec.parent.is_none() {
            init_seed = rec.init_seed;
        }
        cursor = rec.parent;
    }
    chain.reverse();
    let init_seed = init_seed.ok_or_else(|| LogError::Integrity {
        index: 0,
        message: format!("lineage of {trial} has no init seed"),
    })?;
    Ok(Schedule {
        init_seed,
        steps: chain,
    })
}

/// Re-trains a fresh state through `schedule` and returns its metric.
pub fn replay_schedule<T: Trainer + ?Sized>(trainer: &T, schedule: &Schedule) -> Result<f64, TrainerError> {
    let token = trainer.init(schedule.init_seed)?;
    let result = (|| {
        for step in &schedule.steps {
            trainer.train(&token, &step.policy, step.steps, &step.train_stream)?;
        }
        trainer.evaluate(&token)
    })();
    let _ = trainer.release(&token);
    result
}
