//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Runs without the test harness so the report always reaches stdout:
//! `cargo test --test acceptance`. Criteria listed in `UNMET` are reported
//! but do not fail the target; every other criterion must pass.

mod common;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::{frustum_oracle, random_scene};
use ppba_core::augment::{
    apply_policy, flip_y, frustum_dropout_traced, frustum_noise_traced, global_translate_noise, ground_truth_augment,
    random_dropout, random_flip, random_rotation, world_scaling, AugmentOutcome, BandCombine, FrustumParams,
    GroundTruthDatabase, OpKind,
};
use ppba_core::engine::{
    explore, extract_schedule, random_subset, replay_schedule, run_pba_baseline, run_search, ExploreBranch,
    ExploreCounters, HistoricalOpParams, RunOptions, SearchConfig, SubsetScenario, TrialRef,
};
use ppba_core::geom::{from_spherical, rotate_z, to_spherical};
use ppba_core::harness::{
    run_comparison, schedule_stream, schedule_trajectory_stats, surrogate_trainer, toy_task_trainer, training_stream,
    ComparisonConfig, Method, SurrogateSpec, TaskSpec, ToyModel, ToyState, ToyTaskSpec,
};
use ppba_core::protocol::{InProcessTrainer, Model, Trainer, TrainerError};
use ppba_core::rng::{RandomStream, StreamId};
use ppba_core::space::{default_space, sample_random, PolicyAssignment};

const UNMET: &[usize] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// The comparison profile shared by criteria 7 and 8.
fn benchmark_search(seed: u64) -> SearchConfig {
    let mut c = SearchConfig::new(20, 100, 100, seed);
    c.num_trials = 32;
    c.recency_window = Some(2);
    c.rival_count = 1;
    c
}

fn geometric_invariants() -> Outcome {
    let start = Instant::now();
    let scenes = 10_000;
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str, i: usize| {
        if !ok && failures.len() < 5 {
            failures.push(format!("{what} on scene {i}"));
        }
    };
    let space = default_space();
    let mut rng = RandomStream::from_seed(2024);
    for i in 0..scenes {
        let scene = random_scene(&mut rng, 200);
        let n = scene.points.len();
        let stream = StreamId::root(2024).indexed("scene", i);
        let mut r = stream.stream();

        check(random_flip(&scene, 0.5, &mut r).unwrap().points.len() == n, "flip count", i);
        check(world_scaling(&scene, 0.7, 1.3, &mut r).unwrap().points.len() == n, "scaling count", i);
        check(global_translate_noise(&scene, [0.2, 0.2, 0.1], &mut r).unwrap().points.len() == n, "translate count", i);
        let fp = FrustumParams::new(0.3, 1.0, 5.0, BandCombine::Union);
        check(frustum_noise_traced(&scene, &fp, 0.5, &mut r).unwrap().0.points.len() == n, "frustum noise count", i);
        check(random_rotation(&scene, 0.7, &mut r).unwrap().points.len() == n, "rotation count", i);
        check(frustum_dropout_traced(&scene, &fp, 0.3, &mut r).unwrap().0.points.len() <= n, "frustum dropout count", i);
        check(random_dropout(&scene, 0.4, &mut r).unwrap().points.len() <= n, "dropout count", i);
        let db = GroundTruthDatabase::from_scenes([&scene]);
        check(ground_truth_augment(&scene, &db, [0.7; 4], &mut r).unwrap().0.points.len() >= n, "paste count", i);

        let mut gated = sample_random(&space, &mut r);
        for v in gated.ops.values_mut() {
            v.prob = 0.0;
        }
        check(apply_policy(&scene, &gated, &db, &stream.child("policy").stream()).unwrap().scene.bit_eq(&scene), "gated identity", i);

        check(flip_y(&flip_y(&scene)).bit_eq(&scene), "flip involution", i);

        let angle = r.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
        let rotated = rotate_z(&scene, angle);
        let iso = scene
            .points
            .iter()
            .zip(&rotated.points)
            .all(|(a, b)| (a.norm() - b.norm()).abs() < 1e-9 && a.z == b.z);
        let back = rotate_z(&rotated, -angle);
        let inverse = scene
            .points
            .iter()
            .zip(&back.points)
            .all(|(a, b)| (a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        check(iso && inverse, "rotation isometry", i);

        let round = scene.points.iter().filter(|p| p.norm() > 1e-6 && p.norm() <= 100.0).all(|p| {
            let q = from_spherical(&to_spherical(p));
            ((q.x - p.x).powi(2) + (q.y - p.y).powi(2) + (q.z - p.z).powi(2)).sqrt() < 1e-9
        });
        check(round, "spherical round trip", i);
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!("{scenes} scenes, {} failures {:?}, {:.1}s", failures.len(), failures, elapsed.as_secs_f64()),
    )
}

fn frustum_oracle_equivalence() -> Outcome {
    let mut rng = RandomStream::from_seed(77);
    let (mut draws, mut mismatches, mut unions, mut intersections, mut candidates) = (0, 0, 0, 0, 0usize);
    while draws < 500 {
        let scene = random_scene(&mut rng, 400);
        if scene.points.is_empty() {
            continue;
        }
        let union = draws % 2 == 0;
        let combine = if union { BandCombine::Union } else { BandCombine::Intersection };
        let p = FrustumParams::new(
            rng.uniform_in(0.0, 0.4),
            rng.uniform_in(0.0, 1.3),
            rng.uniform_in(0.0, 50.0),
            combine,
        );
        let (_, trace) = frustum_dropout_traced(&scene, &p, 0.0, &mut rng).unwrap();
        let trace = trace.unwrap();
        let oracle = frustum_oracle(&scene.points, trace.anchor, p.theta_width, p.phi_width, p.distance, union);
        mismatches += trace.candidates.iter().zip(&oracle).filter(|(a, b)| a != b).count();
        candidates += oracle.iter().filter(|c| **c).count();
        if union {
            unions += 1;
        } else {
            intersections += 1;
        }
        draws += 1;
    }
    outcome(
        mismatches == 0 && unions > 0 && intersections > 0,
        format!("{draws} draws ({unions} union, {intersections} intersection), {candidates} candidates, {mismatches} mismatches"),
    )
}

fn search_space_closure() -> Outcome {
    let space = default_space();
    let coords = space.coords();
    let mut rng = RandomStream::from_seed(5);
    let mut out_of_range = 0;
    let cycles = 100_000;
    let mut policy = sample_random(&space, &mut rng);
    for i in 0..cycles {
        if i % 100 == 0 {
            policy = sample_random(&space, &mut rng);
        }
        for op in OpKind::ALL {
            let v = policy.get(op).unwrap().clone();
            policy.set(op, space.mutate_op(op, &v, &mut rng).unwrap());
        }
        if space.validate(&policy).is_err() {
            out_of_range += 1;
        }
        out_of_range += space.normalized(&policy).iter().filter(|x| !(0.0..=1.0).contains(*x)).count();
    }
    let scaling = space.op(OpKind::WorldScaling).param("scaling_range").unwrap();
    let bounds = (scaling.denormalize(0.0).as_real(), scaling.denormalize(1.0).as_real());
    outcome(
        out_of_range == 0 && coords.len() == 28 && bounds == (Some(0.5), Some(1.5)),
        format!("{cycles} cycles over {} parameters, {out_of_range} out of range; scaling range {bounds:?}", coords.len()),
    )
}

fn explore_statistics() -> Outcome {
    let space = default_space();
    let mut rng = RandomStream::from_seed(41);
    let all: BTreeMap<OpKind, _> = OpKind::ALL.iter().map(|&op| (op, space.sample_op(op, &mut rng))).collect();
    let mut historical = HistoricalOpParams::default();
    historical.update(&[OpKind::RandomFlip, OpKind::WorldScaling, OpKind::RandomDropout], &all, 0.4, TrialRef { iteration: 0, trial: 0 });
    let mut counters = ExploreCounters::default();
    let mut misrouted = 0;
    let calls = 10_000;
    for _ in 0..calls {
        let winner: BTreeMap<_, _> = random_subset(&space, 2, &mut rng).into_iter().map(|op| (op, all[&op].clone())).collect();
        let out = explore(&winner, Some(&historical), &space, 2, 0.8, &mut rng).unwrap();
        for (op, branch) in &out.branches {
            let want = if winner.contains_key(op) {
                ExploreBranch::Winner
            } else if historical.get(*op).is_some() {
                ExploreBranch::Historical
            } else {
                ExploreBranch::Random
            };
            misrouted += (*branch != want) as usize;
        }
        counters.record(&out);
    }
    let rate = counters.kept_subset as f64 / calls as f64;
    let key = ExploreCounters::route_key;
    let routed = |s, b| counters.routed.get(&key(s, b)).copied().unwrap_or(0);
    let scenario_ok = [SubsetScenario::Same, SubsetScenario::PartiallyShared, SubsetScenario::Unshared]
        .iter()
        .all(|s| counters.scenarios.get(s).copied().unwrap_or(0) > 0);
    let routes_ok = routed(SubsetScenario::Same, ExploreBranch::Historical) == 0
        && routed(SubsetScenario::Same, ExploreBranch::Random) == 0
        && routed(SubsetScenario::Unshared, ExploreBranch::Winner) == 0
        && routed(SubsetScenario::PartiallyShared, ExploreBranch::Winner) > 0
        && routed(SubsetScenario::Unshared, ExploreBranch::Historical) > 0
        && routed(SubsetScenario::Unshared, ExploreBranch::Random) > 0;
    outcome(
        (0.788..=0.812).contains(&rate) && scenario_ok && routes_ok && misrouted == 0,
        format!("kept-subset rate {rate:.4}, scenarios {:?}, routes {:?}", counters.scenarios, counters.routed),
    )
}

fn degenerate_equivalence() -> Outcome {
    let mut identical = 0;
    for seed in 1..=3 {
        let mut c = SearchConfig::new(8, 50, 50, seed);
        c.num_trials = 8;
        let trainer = surrogate_trainer(SurrogateSpec::static_target(&c.space, seed, c.schedule_steps()));
        let pba = run_pba_baseline(&c, &trainer, RunOptions::default()).unwrap();
        let mut full = c.clone();
        full.num_ops = c.space.enabled_ops().len();
        full.use_historical = false;
        let ppba = run_search(&full, &trainer).unwrap();
        identical += (ppba.log.to_text().as_bytes() == pba.log.to_text().as_bytes()) as usize;
    }
    outcome(identical == 3, format!("{identical} of 3 seeds byte-identical"))
}

/// Toy model that remembers the scenes each training call consumed,
/// keyed by stream and starting step.
struct Recording {
    inner: ToyModel,
    seen: Mutex<HashMap<(String, u64), Vec<u64>>>,
}

fn digest(idx: usize, out: &AugmentOutcome) -> u64 {
    let mut h = DefaultHasher::new();
    idx.hash(&mut h);
    for p in &out.scene.points {
        [p.x, p.y, p.z, p.intensity].map(f64::to_bits).hash(&mut h);
    }
    for b in &out.scene.boxes {
        [b.center_x, b.center_y, b.center_z, b.length, b.width, b.height, b.heading].map(f64::to_bits).hash(&mut h);
        b.class_label.index().hash(&mut h);
    }
    h.finish()
}

impl Model for Recording {
    type State = ToyState;

    fn init(&self, seed: u64) -> ToyState {
        self.inner.init(seed)
    }

    fn train(&self, state: &mut ToyState, policy: &PolicyAssignment, steps: u64, stream: &StreamId) -> Result<(), TrainerError> {
        let mut scenes = Vec::new();
        training_stream(
            self.inner.train_scenes(),
            self.inner.database(),
            policy,
            stream,
            state.step,
            steps,
            self.inner.spec().batch,
            |idx, out| scenes.push(digest(idx, &out)),
        )
        .map_err(|e| TrainerError::Training(e.to_string()))?;
        self.seen.lock().unwrap().insert((stream.to_string(), state.step), scenes);
        self.inner.train(state, policy, steps, stream)
    }

    fn evaluate(&self, state: &ToyState) -> f64 {
        self.inner.evaluate(state)
    }
}

fn determinism_and_replay() -> Outcome {
    let mut c = SearchConfig::new(4, 25, 25, 6);
    c.num_trials = 8;
    let surrogate = surrogate_trainer(SurrogateSpec::static_target(&c.space, 6, c.schedule_steps()));
    let a = run_search(&c, &surrogate).unwrap().log.to_text();
    let b = run_search(&c, &surrogate).unwrap().log.to_text();
    let surrogate_identical = a == b;

    let spec = ToyTaskSpec::new(6);
    let recording = InProcessTrainer::new(Recording {
        inner: ToyModel::new(spec.clone()),
        seen: Mutex::new(HashMap::new()),
    });
    let first = run_search(&c, &recording).unwrap();
    let second = run_search(&c, &toy_task_trainer(spec.clone())).unwrap();
    let toy_identical = first.log.to_text() == second.log.to_text();

    let best = first.best.as_ref().unwrap();
    let schedule = extract_schedule(&first.log, best.trial_ref()).unwrap();
    let seen = recording.model().seen.lock().unwrap();
    let mut searched = Vec::new();
    let mut step = 0;
    for s in &schedule.steps {
        searched.extend(seen.get(&(s.train_stream.to_string(), step)).cloned().unwrap_or_default());
        step += s.steps;
    }
    drop(seen);
    let model = recording.model();
    let mut replayed = Vec::new();
    schedule_stream(model.inner.train_scenes(), model.inner.database(), &schedule, spec.batch, |idx, out| {
        replayed.push(digest(idx, &out))
    })
    .unwrap();
    let stream_equal = !searched.is_empty() && searched == replayed;
    let replay_metric = replay_schedule(&toy_task_trainer(spec), &schedule).unwrap();
    let metric_equal = replay_metric.to_bits() == best.metric.to_bits();

    outcome(
        surrogate_identical && toy_identical && stream_equal && metric_equal,
        format!(
            "logs identical: surrogate {surrogate_identical}, toy {toy_identical}; replayed stream {} scenes equal {stream_equal}; accuracy {} vs {replay_metric} equal {metric_equal}",
            replayed.len(),
            best.metric
        ),
    )
}

fn comparative_performance() -> Outcome {
    let start = Instant::now();
    let search = benchmark_search(0);
    let task = TaskSpec::Surrogate(SurrogateSpec::static_target(&search.space, 0, search.schedule_steps()));
    let cfg = ComparisonConfig {
        budget_steps: search.total_steps(),
        search,
        methods: vec![Method::Ppba, Method::Pba, Method::Random],
        seeds: (1..=5).collect(),
        threads: Some(4),
    };
    let report = run_comparison(&task, &cfg).unwrap();
    let vs_random = report.wins(Method::Ppba, Method::Random);
    let vs_pba = report.wins(Method::Ppba, Method::Pba);
    let elapsed = start.elapsed();
    let finals: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}:{}={:.4}", r.method.name(), r.seed, r.final_best))
        .collect();
    outcome(
        vs_random >= 4 && vs_pba >= 4 && elapsed < Duration::from_secs(600),
        format!(
            "PPBA >= random on {vs_random}/5, PPBA >= PBA on {vs_pba}/5, {:.1}s; {}",
            elapsed.as_secs_f64(),
            finals.join(" ")
        ),
    )
}

fn schedule_adaptivity() -> Outcome {
    let coord = SurrogateSpec::default_drift_coord();
    let mut decreased = 0;
    let mut columns = Vec::new();
    for seed in 1..=5 {
        let c = benchmark_search(seed);
        let spec = SurrogateSpec::drifting_target(&c.space, seed, c.schedule_steps(), coord.clone(), 100.0);
        let res = run_search(&c, &surrogate_trainer(spec)).unwrap();
        let col = schedule_trajectory_stats(&res.log).unwrap().column(&coord).unwrap();
        let (first, last) = (col[0], col[col.len() - 1]);
        decreased += (last < first) as usize;
        columns.push(format!("{seed}: {first:.3} -> {last:.3}"));
    }
    outcome(decreased >= 4, format!("{coord} fell on {decreased}/5 seeds ({})", columns.join(", ")))
}

fn toy_end_to_end() -> Outcome {
    let start = Instant::now();
    let space = default_space();
    let (mut vs_none, mut vs_fixed) = (0, 0);
    let mut rows = Vec::new();
    for seed in 1..=5 {
        let spec = ToyTaskSpec::new(seed);
        let trainer = toy_task_trainer(spec);
        let c = SearchConfig::new(10, 25, 25, seed);
        let res = run_search(&c, &trainer).unwrap();
        let searched = res.best.as_ref().unwrap().metric;
        let constant = |policy: &PolicyAssignment| -> f64 {
            let token = trainer.init(0).unwrap();
            for i in 0..c.num_iterations {
                trainer
                    .train(&token, policy, c.steps_for(i), &StreamId::root(seed).indexed("c", i))
                    .unwrap();
            }
            trainer.evaluate(&token).unwrap()
        };
        let none = constant(&space.identity_policy());
        let fixed = constant(&sample_random(&space, &mut StreamId::root(seed).child("fixed").stream()));
        vs_none += (searched >= none) as usize;
        vs_fixed += (searched >= fixed) as usize;
        rows.push(format!("{seed}: {searched:.3}/{none:.3}/{fixed:.3}"));
    }
    let elapsed = start.elapsed();
    outcome(
        vs_none >= 4 && vs_fixed >= 4 && elapsed < Duration::from_secs(300),
        format!(
            "searched >= no-aug on {vs_none}/5, >= fixed random on {vs_fixed}/5, {:.1}s (searched/no-aug/fixed: {})",
            elapsed.as_secs_f64(),
            rows.join(", ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("geometric invariants", geometric_invariants),
        ("frustum oracle equivalence", frustum_oracle_equivalence),
        ("search-space closure", search_space_closure),
        ("explore statistics", explore_statistics),
        ("degenerate equivalence", degenerate_equivalence),
        ("determinism and replay", determinism_and_replay),
        ("comparative performance", comparative_performance),
        ("schedule adaptivity", schedule_adaptivity),
        ("toy task end to end", toy_end_to_end),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        let o = run();
        println!("criterion {n} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !UNMET.contains(&n) {
            failed.push(n);
        }
        if o.pass && UNMET.contains(&n) {
            println!("criterion {n} passed although listed as unmet");
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
