use ppba_core::engine::{run_search, SearchConfig};
use ppba_core::harness::{surrogate_trainer, SurrogateSpec};
use ppba_core::protocol::{spawn_external_worker, Trainer, TrainerError, WorkerCommand};
use ppba_core::rng::{RandomStream, StreamId};
use ppba_core::space::{default_space, sample_random};

const WORKER: &str = env!("CARGO_BIN_EXE_ppba-surrogate-worker");

fn command(args: &[&str]) -> WorkerCommand {
    let mut cmd = WorkerCommand::new(WORKER);
    cmd.args = args.iter().map(|s| s.to_string()).collect();
    cmd.timeout_secs = 30.0;
    cmd
}

fn small_config(seed: u64) -> SearchConfig {
    let mut c = SearchConfig::new(2, 10, 10, seed);
    c.num_trials = 4;
    c
}

#[test]
fn constant_worker_completes_two_iterations() {
    let trainer = spawn_external_worker(command(&["--constant", "0.5"])).unwrap();
    let res = run_search(&small_config(1), &trainer).unwrap();
    assert_eq!(res.completed_iterations, 2);
    assert_eq!(res.log.records.len(), 8);
    assert!(res.log.records.iter().all(|r| r.metric == Some(0.5)));
    assert_eq!(res.best.unwrap().metric, 0.5);
}

#[test]
fn crash_mid_train_yields_one_failed_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = command(&[]);
    cmd.env = vec![
        ("PPBA_CHECKPOINT_DIR".into(), dir.path().display().to_string()),
        ("PPBA_WORKER_CRASH_ON_TRAIN".into(), "6".into()),
    ];
    let trainer = spawn_external_worker(cmd).unwrap();
    let res = run_search(&small_config(2), &trainer).unwrap();
    assert_eq!(res.log.records.len(), 8);
    let failed: Vec<_> = res.log.records.iter().filter(|r| r.metric.is_none()).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].error.is_some());
    assert_eq!(res.stats.failures, 1);
    assert!(res.best.is_some());
}

#[test]
fn forked_tokens_diverge_and_leave_the_original_alone() {
    let trainer = spawn_external_worker(command(&[])).unwrap();
    let space = default_space();
    let mut rng = RandomStream::from_seed(9);
    let (p, q) = (sample_random(&space, &mut rng), sample_random(&space, &mut rng));
    let s = StreamId::root(0);
    let a = trainer.init(1).unwrap();
    trainer.train(&a, &p, 50, &s).unwrap();
    let before = trainer.evaluate(&a).unwrap();
    let b = trainer.fork(&a).unwrap();
    let c = trainer.fork(&a).unwrap();
    trainer.train(&b, &p, 50, &s).unwrap();
    trainer.train(&c, &q, 50, &s).unwrap();
    assert_eq!(trainer.evaluate(&a).unwrap(), before);
    assert_ne!(trainer.evaluate(&b).unwrap(), trainer.evaluate(&c).unwrap());
    for t in [a, b, c] {
        trainer.release(&t).unwrap();
    }
}

#[test]
fn external_search_matches_in_process() {
    let config = small_config(5);
    let spec = SurrogateSpec::static_target(&default_space(), 0, 1000);
    let local = run_search(&config, &surrogate_trainer(spec)).unwrap();
    let remote = run_search(&config, &spawn_external_worker(command(&[])).unwrap()).unwrap();
    assert_eq!(local.log.to_text(), remote.log.to_text());
}

#[test]
fn unknown_token_is_a_remote_error() {
    let trainer = spawn_external_worker(command(&[])).unwrap();
    let err = trainer.evaluate(&ppba_core::protocol::StateToken("nope".into())).unwrap_err();
    assert!(matches!(err, TrainerError::Remote(_)), "{err:?}");
}

#[test]
fn missing_program_is_a_launch_error() {
    let err = spawn_external_worker(WorkerCommand::new("/nonexistent/worker")).err().unwrap();
    assert!(matches!(err, TrainerError::Launch(_)), "{err:?}");
}
