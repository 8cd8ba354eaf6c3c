//! The six modes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ppba_core::augment::{apply_policy, GroundTruthDatabase};
use ppba_core::engine::{
    extract_schedule, pba_config, replay_schedule, run_random_search, run_search_with, LogError, RandomSearchConfig,
    RunOptions, ScheduleLog, SearchConfig, SearchObserver, SearchResult, TrialRecord, TrialRef,
};
use ppba_core::geom::PointScene;
use ppba_core::harness::{generate_scenes, run_comparison, schedule_stream, schedule_trajectory_stats, ComparisonConfig, Split};
use ppba_core::protocol::{spawn_external_worker, Trainer, TrainerError};
use ppba_core::rng::StreamId;
use serde::Serialize;
use serde_json::json;

use crate::config::{Mode, RunConfig, TrainerChoice};
use crate::policy::{load_policy, PolicyFile, PolicySource};
use crate::scenes::{read_scenes, SceneWriter};

pub const MANIFEST_FORMAT: &str = "ppba-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const LOG_FILE: &str = "schedule.log";
pub const BEST_POLICY_FILE: &str = "best_policy.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RANDOM_FILE: &str = "random_search.json";

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or input: exit 1.
    User(String),
    /// Anything else: exit 2.
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::User(m) | Failure::Internal(m) => m,
        }
    }
}

fn user(e: impl std::fmt::Display) -> Failure {
    Failure::User(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Internal(format!("{}: {e}", path.display()))
}

/// Outcome of a command that ran to its end.
#[derive(Debug, PartialEq, Eq)]
pub enum Completion {
    Done,
    /// Stopped by a signal; outputs reflect the completed iterations.
    Interrupted,
}

pub fn run(config: &RunConfig, resume: bool, stop: Arc<AtomicBool>) -> Result<Completion, Failure> {
    match config.mode {
        Mode::Ppba | Mode::Pba => cmd_search(config, resume, stop),
        Mode::Random => cmd_random(config),
        Mode::Replay => cmd_replay(config),
        Mode::Augment => cmd_augment(config),
        Mode::Bench => cmd_bench(config),
    }
}

fn make_trainer(choice: &TrainerChoice) -> Result<Box<dyn Trainer>, Failure> {
    match choice {
        TrainerChoice::Worker { command } => match spawn_external_worker(command.clone()) {
            Ok(t) => Ok(Box::new(t)),
            Err(e @ TrainerError::Launch(_)) => Err(user(format!("cannot launch worker: {e}"))),
            Err(e) => Err(internal(format!("worker handshake failed: {e}"))),
        },
        other => Ok(other.task().expect("in-process trainer").trainer()),
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = config.out.clone().expect("resolved config has an output directory");
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    tool_version: &'static str,
    status: &'a str,
    config: &'a RunConfig,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

fn write_manifest(
    dir: &Path,
    config: &RunConfig,
    status: &str,
    outputs: &[&str],
    summary: serde_json::Value,
) -> Result<(), Failure> {
    let m = Manifest {
        format: MANIFEST_FORMAT,
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        status,
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        summary,
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &(text + "\n"))
}

fn config_json(config: &RunConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

fn seed_of(config: &RunConfig) -> u64 {
    config.seed.expect("resolved config has a seed")
}

/// Appends each finished iteration to the log file and asks the engine to
/// stop once a signal arrived.
struct LogStreamer {
    file: BufWriter<File>,
    path: PathBuf,
    /// Iterations already in the file; replayed ones are not written again.
    skip_below: usize,
    seen: usize,
    stop: Arc<AtomicBool>,
}

impl SearchObserver for LogStreamer {
    fn on_iteration(&mut self, iteration: usize, records: &[TrialRecord]) -> Result<(), String> {
        self.seen = iteration + 1;
        if iteration < self.skip_below {
            return Ok(());
        }
        let err = |e: std::io::Error| format!("{}: {e}", self.path.display());
        for r in records {
            writeln!(self.file, "{}", ScheduleLog::record_line(r)).map_err(err)?;
        }
        self.file.flush().map_err(err)?;
        self.file.get_ref().sync_data().map_err(err)
    }

    fn should_stop(&self) -> bool {
        self.seen >= self.skip_below && self.stop.load(Ordering::SeqCst)
    }
}

/// Reads a possibly interrupted log: a trailing line without its newline
/// is dropped, then records of a trailing incomplete iteration.
fn read_partial_log(path: &Path, num_trials: usize) -> Result<ScheduleLog, Failure> {
    let mut text = fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    if !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
    }
    let mut log = ScheduleLog::from_text(&text).map_err(|e| user(format!("{}: {e}", path.display())))?;
    let last = log.records.last().map(|r| r.iteration);
    if let Some(t) = last {
        if log.records.iter().filter(|r| r.iteration == t).count() < num_trials {
            log.records.retain(|r| r.iteration != t);
        }
    }
    Ok(log)
}

fn cmd_search(config: &RunConfig, resume: bool, stop: Arc<AtomicBool>) -> Result<Completion, Failure> {
    let dir = out_dir(config)?;
    let search: SearchConfig = match config.mode {
        Mode::Pba => pba_config(&config.search),
        _ => config.search.clone(),
    };
    let trainer = make_trainer(config.trainer.as_ref().expect("search has a trainer"))?;
    let log_path = dir.join(LOG_FILE);

    let prior = if resume && log_path.exists() {
        let prior = read_partial_log(&log_path, search.num_trials)?;
        if prior.header.config != search {
            return Err(user(format!(
                "{} was written with a different search config; refusing to resume",
                log_path.display()
            )));
        }
        Some(prior)
    } else {
        None
    };
    let done = prior
        .as_ref()
        .and_then(|p| p.records.last())
        .map_or(0, |r| r.iteration + 1);
    let mut head = prior.clone().unwrap_or_else(|| ScheduleLog::new(&search));
    if prior.is_none() {
        head.records.clear();
    }
    write_file(&log_path, &head.to_text())?;
    if done > 0 {
        log::info!("resuming after {done} complete iterations");
    }
    let file = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(io_at(&log_path))?;
    let mut streamer = LogStreamer {
        file: BufWriter::new(file),
        path: log_path.clone(),
        skip_below: done,
        seen: 0,
        stop,
    };
    write_manifest(&dir, config, "running", &[LOG_FILE], json!({}))?;

    let options = RunOptions {
        threads: config.threads,
        observer: Some(&mut streamer),
        resume: prior.as_ref(),
    };
    let result = run_search_with(&search, trainer.as_ref(), options).map_err(|e| match e {
        ppba_core::engine::EngineError::Resume { .. } | ppba_core::engine::EngineError::Config { .. } => user(e),
        other => internal(other),
    })?;
    drop(streamer);
    finish_search(config, &dir, &result, trainer.as_ref())
}

fn finish_search(config: &RunConfig, dir: &Path, result: &SearchResult, trainer: &dyn Trainer) -> Result<Completion, Failure> {
    if let Some(best) = &result.best {
        let _ = trainer.release(&best.state_token);
    }
    let mut outputs = vec![LOG_FILE];
    let best_record = result.best.as_ref().and_then(|b| result.log.find(b.trial_ref()));
    if let Some(rec) = best_record {
        let source = PolicySource {
            mode: config.mode.name().into(),
            seed: seed_of(config).to_string(),
            origin: rec.trial_ref().to_string(),
            metric: rec.metric,
            config: config_json(config),
        };
        write_file(&dir.join(BEST_POLICY_FILE), &PolicyFile::new(rec.policy.clone(), Some(source)).to_toml())?;
        outputs.push(BEST_POLICY_FILE);
    }
    if let Ok(table) = schedule_trajectory_stats(&result.log) {
        let text = format!(
            "# ppba-trajectory v1 mode={} seed={} lineage={}\n{}",
            config.mode.name(),
            seed_of(config),
            table.lineage_of,
            table.to_csv()
        );
        write_file(&dir.join(TRAJECTORY_FILE), &text)?;
        outputs.push(TRAJECTORY_FILE);
    }
    let status = if result.stopped_early { "interrupted" } else { "complete" };
    let summary = json!({
        "best_trial": best_record.map(|r| r.trial_ref().to_string()),
        "best_metric": best_record.and_then(|r| r.metric),
        "completed_iterations": result.completed_iterations,
        "total_steps": result.stats.total_steps,
        "exploits": result.stats.exploits,
        "continues": result.stats.continues,
        "reinits": result.stats.reinits,
        "failures": result.stats.failures,
    });
    write_manifest(dir, config, status, &outputs, summary)?;
    match best_record {
        Some(r) => println!(
            "best Ω {} from trial {} after {} iterations ({} training steps)",
            r.omega(),
            r.trial_ref(),
            result.completed_iterations,
            result.stats.total_steps
        ),
        None => println!("no trial finished successfully"),
    }
    if result.stopped_early {
        println!("interrupted; rerun with --resume to continue");
        return Ok(Completion::Interrupted);
    }
    Ok(Completion::Done)
}

fn cmd_random(config: &RunConfig) -> Result<Completion, Failure> {
    let dir = out_dir(config)?;
    let trainer = make_trainer(config.trainer.as_ref().expect("random search has a trainer"))?;
    let per_policy = config.search.schedule_steps();
    let num_policies = (config.budget_steps / per_policy.max(1)) as usize;
    if num_policies == 0 {
        return Err(user(format!(
            "invalid `budget_steps`: {} cannot pay for one policy ({per_policy} steps)",
            config.budget_steps
        )));
    }
    let rcfg = RandomSearchConfig::matching(&config.search, num_policies);
    let result = run_random_search(&rcfg, trainer.as_ref(), config.threads).map_err(internal)?;
    let report = json!({
        "format": "ppba-random-search",
        "version": 1,
        "config": config,
        "random": rcfg,
        "result": result,
    });
    write_file(&dir.join(RANDOM_FILE), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    let mut outputs = vec![RANDOM_FILE];
    let best = result.best();
    if let Some(b) = best {
        let source = PolicySource {
            mode: "random".into(),
            seed: seed_of(config).to_string(),
            origin: format!("policy {}", b.index),
            metric: b.metric,
            config: config_json(config),
        };
        write_file(&dir.join(BEST_POLICY_FILE), &PolicyFile::new(b.policy.clone(), Some(source)).to_toml())?;
        outputs.push(BEST_POLICY_FILE);
    }
    let summary = json!({
        "num_policies": num_policies,
        "best_index": best.map(|b| b.index),
        "best_metric": best.and_then(|b| b.metric),
        "total_steps": result.total_steps,
    });
    write_manifest(&dir, config, "complete", &outputs, summary)?;
    match best.and_then(|b| b.metric.map(|m| (b.index, m))) {
        Some((i, m)) => println!(
            "best Ω {m} from policy {i} of {num_policies} ({} training steps)",
            result.total_steps
        ),
        None => println!("no policy finished successfully"),
    }
    Ok(Completion::Done)
}

fn parse_trial(text: &str) -> Result<TrialRef, Failure> {
    let bad = || user(format!("invalid `replay.trial`: expected `iteration/trial`, got `{text}`"));
    let (a, b) = text.split_once('/').ok_or_else(bad)?;
    let a = a.trim();
    let b = b.trim();
    Ok(TrialRef {
        iteration: a.strip_prefix("iter=").unwrap_or(a).parse().map_err(|_| bad())?,
        trial: b.strip_prefix("trial=").unwrap_or(b).parse().map_err(|_| bad())?,
    })
}

fn log_failure(path: &Path, e: LogError) -> Failure {
    user(format!("{}: {e}", path.display()))
}

fn cmd_replay(config: &RunConfig) -> Result<Completion, Failure> {
    let r = config.replay.as_ref().expect("replay section resolved");
    let file = File::open(&r.log).map_err(|e| user(format!("{}: {e}", r.log.display())))?;
    let log = ScheduleLog::read_from(std::io::BufReader::new(file)).map_err(|e| log_failure(&r.log, e))?;
    let target = match &r.trial {
        Some(t) => parse_trial(t)?,
        None => log
            .best()
            .map(TrialRecord::trial_ref)
            .ok_or_else(|| user(format!("{}: no successful trial to replay", r.log.display())))?,
    };
    let recorded = log
        .find(target)
        .ok_or_else(|| user(format!("{}: no record for trial {target}", r.log.display())))?
        .metric;
    let schedule = extract_schedule(&log, target).map_err(|e| log_failure(&r.log, e))?;
    println!(
        "schedule of trial {target}: {} segments, {} training steps, init seed {}",
        schedule.steps.len(),
        schedule.total_steps(),
        schedule.init_seed
    );

    if let Some(output) = &r.output {
        let (scenes, db, source) = replay_inputs(config)?;
        let meta = json!({
            "producer": "ppba replay",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "log": r.log,
            "trial": target.to_string(),
            "init_seed": schedule.init_seed,
            "batch": r.batch,
            "scene_source": source,
            "search_config": log.header.config,
        });
        let mut writer = SceneWriter::create(output, &meta).map_err(|e| internal(format!("{}: {e}", output.display())))?;
        let mut write_err = None;
        schedule_stream(&scenes, &db, &schedule, r.batch, |_, out| {
            if write_err.is_none() {
                write_err = writer.write(&out.scene).err();
            }
        })
        .map_err(user)?;
        if let Some(e) = write_err {
            return Err(internal(format!("{}: {e}", output.display())));
        }
        let n = writer.written();
        writer.finish().map_err(internal)?;
        println!("wrote {n} augmented scenes to {}", output.display());
    }

    if let Some(choice) = &config.trainer {
        let trainer = make_trainer(&for_log(choice, &log.header.config)?)?;
        let metric = replay_schedule(trainer.as_ref(), &schedule).map_err(internal)?;
        match recorded {
            Some(m) if m.to_bits() == metric.to_bits() => println!("replayed Ω {metric} matches the log"),
            Some(m) => return Err(user(format!("replayed Ω {metric} differs from the logged {m}"))),
            None => println!("replayed Ω {metric} (the logged trial failed)"),
        }
    }
    Ok(Completion::Done)
}

/// The trainer as the logged run used it: horizon and space come from the
/// log header.
fn for_log(choice: &TrainerChoice, search: &SearchConfig) -> Result<TrainerChoice, Failure> {
    let mut choice = choice.clone();
    match &mut choice {
        TrainerChoice::Surrogate { spec } => {
            if spec.space != search.space {
                return Err(user("the surrogate space differs from the space in the log"));
            }
            spec.horizon = search.schedule_steps();
        }
        TrainerChoice::Toy { spec } => spec.space = search.space.clone(),
        TrainerChoice::Worker { .. } => {}
    }
    Ok(choice)
}

/// Scenes and object database for a replayed stream, plus a description of
/// where they came from.
fn replay_inputs(config: &RunConfig) -> Result<(Vec<PointScene>, GroundTruthDatabase, serde_json::Value), Failure> {
    let r = config.replay.as_ref().expect("replay section resolved");
    let (scenes, source) = match (&r.scenes, &config.trainer) {
        (Some(path), _) => {
            let (scenes, _) = read_scenes(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            (scenes, json!({ "file": path }))
        }
        (None, Some(TrainerChoice::Toy { spec })) => (generate_scenes(spec, Split::Train), json!({ "toy": spec })),
        (None, _) => return Err(user("missing `replay.scenes`")),
    };
    let db = match &r.db {
        Some(path) => {
            let (db_scenes, _) = read_scenes(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            GroundTruthDatabase::from_scenes(&db_scenes)
        }
        None => GroundTruthDatabase::from_scenes(&scenes),
    };
    Ok((scenes, db, source))
}

fn cmd_augment(config: &RunConfig) -> Result<Completion, Failure> {
    let a = config.augment.as_ref().expect("augment section resolved");
    let policy = load_policy(&a.policy, &config.search.space).map_err(user)?;
    let (scenes, _) = read_scenes(&a.scenes).map_err(|e| user(format!("{}: {e}", a.scenes.display())))?;
    let db = match &a.db {
        Some(path) => {
            let (db_scenes, _) = read_scenes(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            GroundTruthDatabase::from_scenes(&db_scenes)
        }
        None => GroundTruthDatabase::empty(),
    };
    let seed = seed_of(config);
    let meta = json!({
        "producer": "ppba augment",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "policy": policy,
        "scenes": a.scenes,
        "db": a.db,
    });
    let mut writer = SceneWriter::create(&a.output, &meta).map_err(|e| internal(format!("{}: {e}", a.output.display())))?;
    let root = StreamId::root(seed).child("augment");
    let (mut before, mut after, mut pasted) = (0usize, 0usize, 0usize);
    let mut warnings: BTreeMap<String, usize> = BTreeMap::new();
    println!("scene\tpoints_before\tpoints_after\tboxes_pasted");
    for (i, scene) in scenes.iter().enumerate() {
        let out = apply_policy(scene, &policy, &db, &root.indexed("scene", i).stream()).map_err(user)?;
        println!(
            "{}\t{}\t{}\t{}",
            scene.scene_id,
            scene.points.len(),
            out.scene.points.len(),
            out.pasted_boxes
        );
        for w in out.warnings {
            *warnings.entry(w).or_default() += 1;
        }
        before += scene.points.len();
        after += out.scene.points.len();
        pasted += out.pasted_boxes;
        writer.write(&out.scene).map_err(internal)?;
    }
    writer.finish().map_err(internal)?;
    for (w, n) in &warnings {
        log::warn!("{w} ({n} scenes)");
    }
    println!("total\t{before}\t{after}\t{pasted}");
    Ok(Completion::Done)
}

fn cmd_bench(config: &RunConfig) -> Result<Completion, Failure> {
    let dir = out_dir(config)?;
    let task = config
        .trainer
        .as_ref()
        .and_then(TrainerChoice::task)
        .expect("bench trainer is in-process");
    let cmp = ComparisonConfig {
        search: config.search.clone(),
        methods: config.methods.clone(),
        seeds: config.seeds.clone(),
        budget_steps: config.budget_steps,
        threads: config.threads,
    };
    let report = run_comparison(&task, &cmp).map_err(|e| match e {
        ppba_core::engine::EngineError::Config { .. } => user(e),
        other => internal(other),
    })?;
    let stem = report.file_stem();
    let summary_name = format!("{stem}.summary.csv");
    let trajectory_name = format!("{stem}.trajectory.csv");
    let report_name = format!("{stem}.json");
    write_file(&dir.join(&summary_name), &report.summary_csv())?;
    write_file(&dir.join(&trajectory_name), &report.trajectory_csv())?;
    let full = json!({ "config": config, "report": report });
    write_file(&dir.join(&report_name), &(serde_json::to_string_pretty(&full).expect("report serializes") + "\n"))?;
    write_manifest(
        &dir,
        config,
        "complete",
        &[&summary_name, &trajectory_name, &report_name],
        json!({ "num_iterations": report.num_iterations, "wins": report.wins }),
    )?;
    print!("{}", report.summary_csv());
    for (k, v) in &report.wins {
        println!("{k}: {v} of {} seeds", config.seeds.len());
    }
    Ok(Completion::Done)
}
