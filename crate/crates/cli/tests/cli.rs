use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppba_cli::config::{Mode, Overrides, RunConfig, RunFile};
use ppba_cli::policy::{load_policy, PolicyFile};
use ppba_cli::scenes::{read_scenes, write_scenes, SceneReader};
use ppba_core::augment::OpKind;
use ppba_core::engine::ScheduleLog;
use ppba_core::geom::{Box3D, ClassLabel, Point, PointScene};
use ppba_core::harness::{generate_scenes, Split, ToyTaskSpec};
use ppba_core::space::{default_space, OpValues, ParamValue, PolicyAssignment};
use serde_json::json;
use tempfile::TempDir;

fn ppba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppba"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SURROGATE_SEARCH: &str = r#"
mode = "ppba"
seed = 11
out = "out"

[search]
num_trials = 6
num_iterations = 5
steps_first_iteration = 20
steps_per_iteration = 20
recency_window = 2

[trainer.surrogate]
family = "static_target"
"#;

const TOY_SEARCH: &str = r#"
mode = "ppba"
seed = 4
out = "out"

[search]
num_trials = 6
num_iterations = 3
steps_first_iteration = 10
steps_per_iteration = 10

[trainer.toy]
"#;

fn toy_replay(output: &str) -> String {
    format!(
        r#"
mode = "replay"
seed = 4

[search]
num_trials = 6
num_iterations = 3
steps_first_iteration = 10
steps_per_iteration = 10

[replay]
log = "out/schedule.log"
output = "{output}"

[trainer.toy]
"#
    )
}

fn sample_scene(id: &str) -> PointScene {
    let points = vec![
        Point::new(1.0, 2.0, 0.5).with_intensity(0.25),
        Point::new(-3.5, 0.125, -1.0),
        Point::new(f64::MIN_POSITIVE, 1e300, -0.0).with_intensity(1.0),
    ];
    let boxes = vec![
        Box3D::new([1.0, 2.0, 0.5], [4.0, 2.0, 1.5], 0.3, ClassLabel::Vehicle).unwrap(),
        Box3D::new([-3.0, 0.0, -0.5], [0.8, 0.8, 1.8], -3.0, ClassLabel::Pedestrian).unwrap(),
    ];
    PointScene::new(id, points, boxes)
}

#[test]
fn scene_container_round_trips_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("s.scenes");
    let scenes = vec![sample_scene("a"), PointScene::new("empty", vec![], vec![]), sample_scene("ünï")];
    let meta = json!({ "producer": "test", "n": 3 });
    write_scenes(&path, &scenes, &meta).unwrap();
    let (back, meta_back) = read_scenes(&path).unwrap();
    assert_eq!(meta_back, meta);
    assert_eq!(back.len(), scenes.len());
    for (a, b) in scenes.iter().zip(&back) {
        assert!(a.bit_eq(b), "{} differs", a.scene_id);
    }
}

#[test]
fn truncated_scene_record_is_reported_with_its_index() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("s.scenes");
    write_scenes(&path, &[sample_scene("a"), sample_scene("b")], &json!({})).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let reader = SceneReader::open(&path).unwrap();
    let results: Vec<_> = reader.collect();
    assert!(results[0].is_ok());
    let err = results[1].as_ref().unwrap_err().to_string();
    assert!(err.contains("record 1"), "{err}");
}

#[test]
fn non_container_is_rejected() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "x.scenes", "hello\n");
    assert!(SceneReader::open(&path).is_err());
}

#[test]
fn missing_seed_is_refused() {
    let dir = TempDir::new().unwrap();
    let text = SURROGATE_SEARCH.replace("seed = 11\n", "");
    write(dir.path(), "run.toml", &text);
    let o = ppba(dir.path(), &["--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn defaults_are_population_sixteen_two_ops_rate_point_eight() {
    let file: RunFile = toml::from_str("[trainer.surrogate]\nfamily = \"static_target\"\n").unwrap();
    let overrides = Overrides {
        mode: Some(Mode::Ppba),
        seed: Some(1),
        out: Some("o".into()),
        ..Default::default()
    };
    let c = RunConfig::resolve(file, Path::new(""), &overrides).unwrap();
    assert_eq!(c.search.num_trials, 16);
    assert_eq!(c.search.num_ops, 2);
    assert_eq!(c.search.exploration_rate, 0.8);
    assert_eq!(c.search.seed, 1);
    assert_eq!(c.budget_steps, c.search.total_steps());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", &format!("{SURROGATE_SEARCH}\n[serach]\nx = 1\n"));
    let o = ppba(dir.path(), &["--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn two_trainers_are_rejected() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", &format!("{SURROGATE_SEARCH}\n[trainer.toy]\n"));
    let o = ppba(dir.path(), &["--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exactly one"), "{}", stderr(&o));
}

#[test]
fn search_writes_every_output_with_config_and_seed() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SURROGATE_SEARCH);
    let o = ppba(dir.path(), &["--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("best Ω"));
    let out = dir.path().join("out");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["format"], "ppba-run-manifest");
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["config"]["seed"], 11);
    assert_eq!(manifest["config"]["search"]["num_trials"], 6);
    let log = ScheduleLog::from_text(&fs::read_to_string(out.join("schedule.log")).unwrap()).unwrap();
    assert_eq!(log.records.len(), 30);
    let policy = PolicyFile::parse(&fs::read_to_string(out.join("best_policy.toml")).unwrap()).unwrap();
    let source = policy.source.unwrap();
    assert_eq!(source.seed, "11");
    assert_eq!(Some(&policy.policy), log.best().map(|r| &r.policy));
    let trajectory = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(trajectory.starts_with("# ppba-trajectory v1 mode=ppba seed=11"));
}

#[test]
fn deterministic_runs_write_identical_logs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    write(a.path(), "run.toml", SURROGATE_SEARCH);
    write(b.path(), "run.toml", &format!("threads = 1\n{SURROGATE_SEARCH}"));
    assert!(ppba(a.path(), &["--config", "run.toml", "--deterministic"]).status.success());
    assert!(ppba(b.path(), &["--config", "run.toml"]).status.success());
    let la = fs::read(a.path().join("out/schedule.log")).unwrap();
    let lb = fs::read(b.path().join("out/schedule.log")).unwrap();
    assert!(la == lb, "logs differ");
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SURROGATE_SEARCH);
    let o = ppba(dir.path(), &["--config", "run.toml", "--seed", "12", "--out", "o12"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = ScheduleLog::from_text(&fs::read_to_string(dir.path().join("o12/schedule.log")).unwrap()).unwrap();
    assert_eq!(log.header.config.seed, 12);
}

#[test]
fn resume_after_a_cut_log_reproduces_the_full_run() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SURROGATE_SEARCH);
    assert!(ppba(dir.path(), &["--config", "run.toml"]).status.success());
    let log_path = dir.path().join("out/schedule.log");
    let full = fs::read(&log_path).unwrap();
    let text = String::from_utf8(full.clone()).unwrap();
    // Header, two complete iterations, half of the third, and a torn line.
    let lines: Vec<&str> = text.lines().collect();
    let mut cut = lines[..1 + 6 * 2 + 3].join("\n");
    cut.push('\n');
    cut.push_str(&lines[16][..10]);
    fs::write(&log_path, cut).unwrap();

    let o = ppba(dir.path(), &["--config", "run.toml", "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read(&log_path).unwrap() == full, "resumed log differs");
}

#[test]
fn resume_refuses_a_log_from_another_config() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SURROGATE_SEARCH);
    assert!(ppba(dir.path(), &["--config", "run.toml"]).status.success());
    let o = ppba(dir.path(), &["--config", "run.toml", "--resume", "--seed", "99"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_reproduces_the_logged_metric() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SURROGATE_SEARCH);
    assert!(ppba(dir.path(), &["--config", "run.toml"]).status.success());
    let replay = "mode = \"replay\"\nseed = 11\n[replay]\nlog = \"out/schedule.log\"\ntrial = \"4/2\"\n[trainer.surrogate]\nfamily = \"static_target\"\n";
    write(dir.path(), "replay.toml", replay);
    let o = ppba(dir.path(), &["--config", "replay.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("matches the log"));
}

#[test]
fn replay_of_a_toy_schedule_is_repeatable_and_matches_accuracy() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", TOY_SEARCH);
    assert!(ppba(dir.path(), &["--config", "run.toml"]).status.success());
    write(dir.path(), "r1.toml", &toy_replay("a.scenes"));
    write(dir.path(), "r2.toml", &toy_replay("b.scenes"));
    for cfg in ["r1.toml", "r2.toml"] {
        let o = ppba(dir.path(), &["--config", cfg]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("matches the log"), "{}", stdout(&o));
    }
    let (a, meta) = read_scenes(&dir.path().join("a.scenes")).unwrap();
    let (b, _) = read_scenes(&dir.path().join("b.scenes")).unwrap();
    let log = ScheduleLog::from_text(&fs::read_to_string(dir.path().join("out/schedule.log")).unwrap()).unwrap();
    let best = log.best().unwrap().trial_ref();
    let steps = ppba_core::engine::extract_schedule(&log, best).unwrap().total_steps();
    assert_eq!(a.len() as u64, steps * ToyTaskSpec::new(4).batch as u64);
    assert!(a.iter().zip(&b).all(|(x, y)| x.bit_eq(y)));
    assert_eq!(meta["producer"], "ppba replay");
}

#[test]
fn corrupt_log_is_a_user_error_naming_the_record() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SURROGATE_SEARCH);
    assert!(ppba(dir.path(), &["--config", "run.toml"]).status.success());
    let log_path = dir.path().join("out/schedule.log");
    let text = fs::read_to_string(&log_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Record 8 is iteration 1, trial 2; make it a second trial 1.
    assert!(lines[9].contains("\"iteration\":1,\"trial\":2,"));
    lines[9] = lines[9].replacen("\"trial\":2,", "\"trial\":1,", 1);
    fs::write(&log_path, lines.join("\n") + "\n").unwrap();
    let replay = "mode = \"replay\"\nseed = 11\n[replay]\nlog = \"out/schedule.log\"\n[trainer.surrogate]\nfamily = \"static_target\"\n";
    write(dir.path(), "replay.toml", replay);
    let o = ppba(dir.path(), &["--config", "replay.toml"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("record 8"), "{}", stderr(&o));
}

#[test]
fn missing_worker_program_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let text = SURROGATE_SEARCH.replace("[trainer.surrogate]\nfamily = \"static_target\"\n", "");
    write(dir.path(), "run.toml", &text);
    let o = ppba(dir.path(), &["--config", "run.toml", "--worker-cmd", "/nonexistent/worker --flag"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("launch"), "{}", stderr(&o));
}

#[test]
fn random_mode_spends_the_budget_on_whole_policies() {
    let dir = TempDir::new().unwrap();
    let text = SURROGATE_SEARCH.replace("mode = \"ppba\"", "mode = \"random\"") + "";
    write(dir.path(), "run.toml", &format!("budget_steps = 250\n{text}"));
    let o = ppba(dir.path(), &["--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/random_search.json")).unwrap()).unwrap();
    assert_eq!(report["random"]["num_policies"], 2);
    assert_eq!(report["result"]["total_steps"], 200);
}

#[test]
fn bench_writes_named_reports() {
    let dir = TempDir::new().unwrap();
    let text = SURROGATE_SEARCH.replace("mode = \"ppba\"", "mode = \"bench\"");
    write(dir.path(), "run.toml", &format!("{text}\n[bench]\nseeds = [1, 2]\nmethods = [\"ppba\", \"random\"]\n"));
    let o = ppba(dir.path(), &["--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stem = "compare_ppba-random_seeds-1-2_budget-600";
    for ext in ["summary.csv", "trajectory.csv", "json"] {
        assert!(dir.path().join(format!("out/{stem}.{ext}")).exists(), "{ext}");
    }
}

fn augment_fixture(dir: &Path, policy: &PolicyAssignment) -> Vec<PointScene> {
    let scenes = generate_scenes(&ToyTaskSpec::new(9), Split::Train)[..12].to_vec();
    write_scenes(&dir.join("in.scenes"), &scenes, &json!({})).unwrap();
    write_scenes(&dir.join("db.scenes"), &scenes, &json!({})).unwrap();
    fs::write(dir.join("policy.toml"), PolicyFile::new(policy.clone(), None).to_toml()).unwrap();
    write(
        dir,
        "aug.toml",
        "mode = \"augment\"\nseed = 5\n[augment]\npolicy = \"policy.toml\"\nscenes = \"in.scenes\"\ndb = \"db.scenes\"\noutput = \"out.scenes\"\n",
    );
    scenes
}

fn summary_rows(o: &Output) -> Vec<Vec<usize>> {
    stdout(o)
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("total"))
        .map(|l| l.split('\t').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn identity_policy_leaves_scenes_untouched() {
    let dir = TempDir::new().unwrap();
    let scenes = augment_fixture(dir.path(), &default_space().identity_policy());
    let o = ppba(dir.path(), &["--config", "aug.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (out, _) = read_scenes(&dir.path().join("out.scenes")).unwrap();
    assert!(scenes.iter().zip(&out).all(|(a, b)| a.bit_eq(b)));
    assert!(summary_rows(&o).iter().all(|r| r[0] == r[1] && r[2] == 0));
}

#[test]
fn full_dropout_leaves_no_points() {
    let dir = TempDir::new().unwrap();
    let mut policy = default_space().identity_policy();
    let mut v = OpValues {
        prob: 1.0,
        params: Default::default(),
    };
    v.params.insert("dropout_prob".into(), ParamValue::Real(1.0));
    policy.set(OpKind::RandomDropout, v);
    augment_fixture(dir.path(), &policy);
    let o = ppba(dir.path(), &["--config", "aug.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (out, _) = read_scenes(&dir.path().join("out.scenes")).unwrap();
    assert!(out.iter().all(|s| s.points.is_empty()));
    assert!(summary_rows(&o).iter().all(|r| r[1] == 0));
}

#[test]
fn pasted_boxes_stay_below_twenty_five() {
    let dir = TempDir::new().unwrap();
    let mut policy = default_space().identity_policy();
    let mut v = OpValues {
        prob: 1.0,
        params: Default::default(),
    };
    for class in ["vehicle_prob", "pedestrian_prob", "cyclist_prob", "other_prob"] {
        v.params.insert(class.into(), ParamValue::Real(1.0));
    }
    policy.set(OpKind::GroundTruthAugmentor, v);
    augment_fixture(dir.path(), &policy);
    let o = ppba(dir.path(), &["--config", "aug.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = summary_rows(&o);
    assert!(rows.iter().all(|r| r[2] < 25));
    assert!(rows.iter().any(|r| r[2] > 0));
}

#[test]
fn out_of_range_policy_names_the_op_and_parameter() {
    let dir = TempDir::new().unwrap();
    let mut policy = default_space().identity_policy();
    let mut v = policy.get(OpKind::WorldScaling).unwrap().clone();
    v.params.insert("scaling_range".into(), ParamValue::Real(2.0));
    policy.set(OpKind::WorldScaling, v);
    augment_fixture(dir.path(), &policy);
    let err = load_policy(&dir.path().join("policy.toml"), &default_space()).unwrap_err().to_string();
    assert!(err.contains("WorldScaling") && err.contains("scaling_range"), "{err}");
    let o = ppba(dir.path(), &["--config", "aug.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("scaling_range"), "{}", stderr(&o));
}

#[test]
fn bare_policy_table_is_accepted() {
    let toml_text = toml::to_string(&default_space().identity_policy()).unwrap();
    let file = PolicyFile::parse(&toml_text).unwrap();
    assert!(file.source.is_none());
    assert_eq!(file.policy, default_space().identity_policy());
}
