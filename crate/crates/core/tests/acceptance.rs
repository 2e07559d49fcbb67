//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full default grid, so it takes several minutes in the test
//! profile. Exits non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sonomyo::cli::{self, CNN_DIR, SVC_DIR};
use sonomyo::cnn::{gradcheck, train_cnn, Architecture, CnnModel, TrainConfig, TrainingHistory};
use sonomyo::config::{Cell, RunConfig};
use sonomyo::kinematics::{mcp_angle, Finger, McpAngles};
use sonomyo::metrics::{accuracy, rmse, ConfusionMatrix};
use sonomyo::pipeline::{self, FrameTruth, StageObserver};
use sonomyo::split::SequentialSplit;
use sonomyo::svc::{confusion, train_svc, SvcModel};
use sonomyo::synthgen::{generate_session, hand_markers, write_session, Configuration, SessionSpec, Speed};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const SVC_ACCURACY_MIN: f64 = 99.0;
const RMSE_MAX_DEG: f64 = 7.35;
const CNN_CONFIGS_MIN: usize = 9;
const THROUGHPUT_MIN_HZ: f64 = 6.25;
const DEMO_FRAMES: usize = 100;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, format!("{what} took {took:.1?}, limit {limit:?}"))
}

/// Shared artifacts of the grid criteria.
#[derive(Default)]
struct Grid {
    cfg: Option<RunConfig>,
    svc: Option<SvcModel>,
    cnn_histories: Vec<TrainingHistory>,
    cnns_ready: bool,
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for flex in [0.0, 30.0, 60.0, 90.0] {
        let markers = hand_markers([flex; 4]);
        for finger in Finger::ALL {
            let [m1, m2, p1, p2] = markers[finger.index()];
            let raw = mcp_angle(finger, m1, m2, p1, p2).map_err(|e| e.to_string())?;
            let display = McpAngles::from_flexion([raw; 4]).display_angle(finger);
            let err = (display - (180.0 + flex)).abs();
            worst = worst.max(err);
            check(err <= 1e-9, format!("{finger:?} at {flex} deg: display {display}"))?;
        }
    }
    Ok(format!("display 180/210/240/270 deg, max error {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut total = gradcheck::GradCheck::default();
    let tiny: Architecture = "input=1x6x5;conv3:3;relu;pool2;conv3:2;relu;flatten;dense:5;relu;dense:4;scale:10"
        .parse()
        .map_err(|e| format!("{e}"))?;
    let micro = Architecture::micro(8, 8);
    for seed in 0..GRAD_SEEDS {
        total.merge(gradcheck::check_conv(seed));
        total.merge(gradcheck::check_dense(100 + seed));
        total.merge(gradcheck::check_relu_pool(200 + seed));
        for arch in [&tiny, &micro] {
            total.merge(gradcheck::check_network(arch, seed).map_err(|e| e.to_string())?);
        }
    }
    check(total.max_rel_error < GRAD_TOL, format!("worst {}", total.worst))?;
    within(Duration::from_secs(60), start, "gradient checks")?;
    Ok(format!(
        "{} probes over {GRAD_SEEDS} seeds ({} kink probes skipped), max rel error {:.2e}, {:.1?}",
        total.checked,
        total.skipped,
        total.max_rel_error,
        start.elapsed()
    ))
}

fn criterion_3(root: &Path, grid: &mut Grid) -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig {
        out_dir: root.to_path_buf(),
        ..RunConfig::default()
    };
    let errs = cfg.validate();
    check(errs.is_empty(), format!("default config invalid: {errs:?}"))?;
    cli::cmd_generate(&cfg).map_err(|e| e.to_string())?;
    let generated = start.elapsed();
    let data = cli::svc_dataset(&cfg).map_err(|e| e.to_string())?;
    let (train, test) = cli::svc_split(&cfg, &data);
    drop(data);
    let svc = train_svc(&train, cfg.svc.lambda, cfg.svc.epochs, cfg.seed).map_err(|e| e.to_string())?;
    let cm = confusion(&svc, &test).map_err(|e| e.to_string())?;
    let acc = cm.accuracy().map_err(|e| e.to_string())?;
    fs::create_dir_all(root.join(SVC_DIR)).map_err(|e| e.to_string())?;
    svc.save(&root.join(SVC_DIR).join("svc.bin")).map_err(|e| e.to_string())?;
    grid.cfg = Some(cfg);
    grid.svc = Some(svc);
    check(acc >= SVC_ACCURACY_MIN, format!("held-out accuracy {acc:.3}%\n{}", cm.to_table()))?;
    within(Duration::from_secs(600), start, "grid generation and SVC")?;
    Ok(format!(
        "held-out accuracy {acc:.3}% on {} frames ({} train), {:.1?} (generation {generated:.1?})",
        test.len(),
        train.len(),
        start.elapsed()
    ))
}

fn criterion_4(grid: &mut Grid) -> Outcome {
    let start = Instant::now();
    let cfg = grid.cfg.clone().ok_or("grid not generated (criterion 3 failed early)")?;
    let speed = cfg.bundle_speed()?;
    let train_cfg = cfg.cnn_train_config();
    let arch = train_cfg
        .architecture_for(cfg.preprocess.cnn.target_height, cfg.preprocess.cnn.target_width)
        .map_err(|e| e.to_string())?;
    fs::create_dir_all(cfg.out_dir.join(CNN_DIR)).map_err(|e| e.to_string())?;
    let mut passing = 0;
    let mut lines = Vec::new();
    for configuration in Configuration::CLASSES {
        let cell = Cell {
            configuration,
            speed,
            seed: cfg.grid.seeds[0],
        };
        let session = cli::load_session(&cfg, &cell).map_err(|e| e.to_string())?;
        let (inputs, targets) = cli::cnn_samples(&cfg, &session).map_err(|e| e.to_string())?;
        let (model, history) = train_cnn(&inputs, &targets, arch.clone(), &train_cfg).map_err(|e| e.to_string())?;
        let per_finger = cli::cell_rmse(&cfg, &cell, &model, &session).map_err(|e| e.to_string())?;
        model
            .save(&cfg.out_dir.join(CNN_DIR).join(format!("{}.bin", cell.key())))
            .map_err(|e| e.to_string())?;
        grid.cnn_histories.push(history);
        let worst = per_finger.iter().cloned().fold(0.0, f64::max);
        if worst <= RMSE_MAX_DEG {
            passing += 1;
        }
        lines.push(format!(
            "{configuration}: [{}]",
            per_finger.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
        ));
    }
    grid.cnns_ready = true;
    let detail = lines.join("; ");
    check(
        passing >= CNN_CONFIGS_MIN,
        format!("{passing}/11 configurations within {RMSE_MAX_DEG} deg: {detail}"),
    )?;
    within(Duration::from_secs(1800), start, "CNN training")?;
    Ok(format!(
        "{passing}/11 configurations with every finger RMSE <= {RMSE_MAX_DEG} deg, {:.1?}; {detail}",
        start.elapsed()
    ))
}

fn criterion_5() -> Outcome {
    let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).map_err(|e| e.to_string())?;
    check((r - 12.5f64.sqrt()).abs() <= 1e-12, format!("rmse {r}"))?;
    let labels = [1, 2, 3, 4, 5];
    check(accuracy(&labels, &labels).map_err(|e| e.to_string())? == 100.0, "all-correct accuracy")?;
    check(accuracy(&labels, &[2, 3, 4, 5, 1]).map_err(|e| e.to_string())? == 0.0, "all-wrong accuracy")?;
    let classes = Configuration::CLASSES.to_vec();
    let truth: Vec<Configuration> = (0..110).map(|k| classes[k % 11]).collect();
    let cm = ConfusionMatrix::from_predictions(classes.clone(), &truth, &truth).map_err(|e| e.to_string())?;
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            check(n == if i == j { 10 } else { 0 }, format!("confusion[{i}][{j}] = {n}"))?;
        }
    }
    check(cm.correct() == cm.total() && cm.accuracy().map_err(|e| e.to_string())? == 100.0, "diagonal identity")?;
    Ok(format!("rmse((0,0),(3,4)) = {r}; accuracy 100/0 identities; diagonal confusion exact"))
}

/// Records stage events and checks that, for every frame, the classifier
/// runs before its regressor is chosen and the regressor matches the class.
#[derive(Default)]
struct OrderCheck {
    pending: Option<(u64, Configuration)>,
    last_frame: Option<u64>,
    frames: usize,
    violations: Vec<String>,
}

impl StageObserver for OrderCheck {
    fn classified(&mut self, frame_index: u64, configuration: Configuration) {
        if let Some((k, _)) = self.pending {
            self.violations.push(format!("frame {k} classified twice or never regressed"));
        }
        if self.last_frame.is_some_and(|k| frame_index <= k) {
            self.violations.push(format!("frame {frame_index} out of order"));
        }
        self.pending = Some((frame_index, configuration));
    }

    fn regressor_selected(&mut self, frame_index: u64, key: Configuration) {
        match self.pending.take() {
            Some((k, c)) if k == frame_index && c == key => {
                self.frames += 1;
                self.last_frame = Some(frame_index);
            }
            other => self
                .violations
                .push(format!("frame {frame_index}: regressor {key} selected after {other:?}")),
        }
    }
}

fn criterion_6(grid: &Grid) -> Outcome {
    let cfg = grid.cfg.as_ref().ok_or("grid not generated")?;
    check(grid.svc.is_some() && grid.cnns_ready, "models from criteria 3 and 4 missing")?;
    let note = cli::assemble_bundle(cfg).map_err(|e| e.to_string())?;
    check(note.starts_with("bundle written"), note.trim().to_string())?;
    let bundle = pipeline::load_bundle(&cfg.out_dir.join(cli::BUNDLE_DIR)).map_err(|e| e.to_string())?;

    let configuration: Configuration = cfg.demo.configuration.parse().map_err(|e| format!("{e}"))?;
    let speed: Speed = cfg.demo.speed.parse().map_err(|e| format!("{e}"))?;
    let spec = cfg
        .session_spec(configuration, speed, cfg.demo.seed)
        .with_timing((DEMO_FRAMES as f64 / cfg.generator.frame_rate).ceil(), cfg.generator.frame_rate);
    let session = generate_session(&spec).map_err(|e| e.to_string())?;
    let frames = &session.frames[..DEMO_FRAMES];
    let truth: Vec<FrameTruth> = session.angles[..DEMO_FRAMES]
        .iter()
        .map(|&angles| FrameTruth { configuration, angles })
        .collect();
    let mut order = OrderCheck::default();
    let (results, summary) =
        pipeline::run_pipeline_observed(&bundle, frames, Some(&truth), &mut order).map_err(|e| e.to_string())?;

    check(order.violations.is_empty(), format!("ordering: {:?}", order.violations))?;
    check(order.frames == DEMO_FRAMES && results.len() == DEMO_FRAMES, format!("{} frames observed", order.frames))?;
    for r in &results {
        let t = r.timings;
        check(
            t.svc_seconds > 0.0 && t.cnn_seconds > 0.0 && t.total_seconds >= t.svc_seconds + t.cnn_seconds,
            format!("frame {} timings {t:?}", r.frame_index),
        )?;
    }
    let (svc, cnn) = (summary.svc.ok_or("no svc stats")?, summary.cnn.ok_or("no cnn stats")?);
    check(
        summary.throughput_hz >= THROUGHPUT_MIN_HZ,
        format!("throughput {:.2} Hz", summary.throughput_hz),
    )?;
    // The CLI demo writes the same run to disk.
    let demo_cfg = RunConfig {
        demo: sonomyo::config::DemoConfig {
            frames: DEMO_FRAMES,
            ..cfg.demo.clone()
        },
        ..cfg.clone()
    };
    cli::cmd_demo(&demo_cfg).map_err(|e| e.to_string())?;
    let jsonl = fs::read_to_string(cfg.out_dir.join(cli::DEMO_DIR).join("results.jsonl")).map_err(|e| e.to_string())?;
    check(jsonl.lines().count() == DEMO_FRAMES, "results.jsonl frame count")?;
    Ok(format!(
        "{DEMO_FRAMES} frames, throughput {:.1} Hz, svc mean {:.2e} s, cnn mean {:.2e} s, accuracy {:.1}%, ordering holds on every frame",
        summary.throughput_hz,
        svc.mean,
        cnn.mean,
        summary.accuracy.unwrap_or(f64::NAN)
    ))
}

const TINY: &str = r#"
seed = 3
[grid]
configurations = ["C1", "C4", "C9"]
speeds = ["medium", "fast"]
seeds = [1]
[generator]
duration = 4.0
image_height = 64
image_width = 32
[preprocess.svc]
target_height = 32
target_width = 16
[preprocess.cnn]
target_height = 16
target_width = 16
[svc]
epochs = 5
[cnn]
epochs = 3
[demo]
frames = 20
"#;

fn tiny_run(out: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::from_toml(TINY)?;
    cfg.out_dir = out.to_path_buf();
    cli::cmd_generate(&cfg).map_err(|e| e.to_string())?;
    cli::cmd_train_svc(&cfg).map_err(|e| e.to_string())?;
    cli::cmd_train_cnn(&cfg).map_err(|e| e.to_string())?;
    cli::cmd_eval(&cfg).map_err(|e| e.to_string())?;
    cli::cmd_demo(&cfg).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_7(scratch: &Path) -> Outcome {
    let (a, b) = (scratch.join("a"), scratch.join("b"));
    let cfg = tiny_run(&a)?;
    tiny_run(&b)?;
    let files = files_under(&a);
    check(files == files_under(&b), "runs produced different file sets")?;
    let mut compared = 0;
    for rel in &files {
        let name = rel.to_string_lossy();
        // Timings and the output path are the only run-dependent content.
        if name.ends_with(cli::RESOLVED_CONFIG_FILE) || name.starts_with(cli::DEMO_DIR) {
            continue;
        }
        let (x, y) = (fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap());
        check(x == y, format!("{name} differs between identical runs"))?;
        compared += 1;
    }
    let untimed = |root: &Path| -> Vec<String> {
        fs::read_to_string(root.join(cli::DEMO_DIR).join("results.jsonl"))
            .unwrap()
            .lines()
            .map(|l| l.split("\"svc_seconds\"").next().unwrap().to_string())
            .collect()
    };
    check(untimed(&a) == untimed(&b), "demo predictions differ")?;

    // In-process generation matches too.
    let spec = SessionSpec::new(Configuration::C6, Speed::Fast, 42).with_timing(8.0, 25.0);
    let (s1, s2) = (generate_session(&spec).unwrap(), generate_session(&spec).unwrap());
    check(
        s1.frames == s2.frames && s1.angles == s2.angles && s1.triggers == s2.triggers,
        "generated sessions differ",
    )?;
    let (d1, d2) = (scratch.join("s1"), scratch.join("s2"));
    write_session(&d1, &s1).map_err(|e| e.to_string())?;
    write_session(&d2, &s2).map_err(|e| e.to_string())?;
    for rel in files_under(&d1) {
        check(fs::read(d1.join(&rel)).unwrap() == fs::read(d2.join(&rel)).unwrap(), format!("{rel:?} differs"))?;
    }

    // save -> load -> predict is bit-identical for both model types.
    let svc = SvcModel::load(&a.join(SVC_DIR).join("svc.bin")).map_err(|e| e.to_string())?;
    let path = scratch.join("svc_copy.bin");
    svc.save(&path).map_err(|e| e.to_string())?;
    let svc2 = SvcModel::load(&path).map_err(|e| e.to_string())?;
    let data = cli::svc_dataset(&cfg).map_err(|e| e.to_string())?;
    for s in &data {
        let (x, y) = (svc.scores(&s.features).unwrap(), svc2.scores(&s.features).unwrap());
        check(
            x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()),
            "SVC scores changed after reload",
        )?;
    }
    let cell = cfg.cells()?[0];
    let session = cli::load_session(&cfg, &cell).map_err(|e| e.to_string())?;
    let (inputs, targets) = cli::cnn_samples(&cfg, &session).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let arch = Architecture::micro(16, 16);
    let (m1, _) = train_cnn(&inputs, &targets, arch.clone(), &tc).map_err(|e| e.to_string())?;
    let (m2, _) = train_cnn(&inputs, &targets, arch.clone(), &tc).map_err(|e| e.to_string())?;
    check(m1.to_bytes() == m2.to_bytes(), "CNN training is not deterministic")?;
    let path = scratch.join("cnn_copy.bin");
    m1.save(&path).map_err(|e| e.to_string())?;
    let m3 = CnnModel::load(&path).map_err(|e| e.to_string())?;
    for x in &inputs {
        let (p, q) = (m1.predict(x).unwrap(), m3.predict(x).unwrap());
        check(
            p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()),
            "CNN predictions changed after reload",
        )?;
    }
    Ok(format!(
        "{compared} files byte-identical across two runs; SVC ({} samples) and CNN ({} inputs) reload bit-identical",
        data.len(),
        inputs.len()
    ))
}

fn criterion_8(grid: &Grid) -> Outcome {
    let cfg = TrainConfig::default();
    let s = SequentialSplit::new(1400, cfg.test_split, cfg.validation_split);
    check((s.train, s.validation, s.test) == (882, 98, 420), format!("split {s:?}"))?;
    check(s.train_range() == (0..882), format!("train range {:?}", s.train_range()))?;
    // Every 56 s, 25 Hz training session of the grid used the same split.
    for h in &grid.cnn_histories {
        check(h.split == s, format!("training used {:?}", h.split))?;
    }
    Ok(format!(
        "1400 frames -> train {} / validation {} / test {} (also in {} training runs)",
        s.train,
        s.validation,
        s.test,
        grid.cnn_histories.len()
    ))
}

fn report(n: u32, outcome: std::thread::Result<Outcome>) -> bool {
    let (ok, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(e)) => (false, e),
        Err(p) => (
            false,
            format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        ),
    };
    println!("criterion {n}: {} - {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut grid = Grid::default();
    let mut all = true;
    all &= report(1, catch_unwind(criterion_1));
    all &= report(2, catch_unwind(criterion_2));
    all &= report(3, catch_unwind(AssertUnwindSafe(|| criterion_3(&root.path().join("grid"), &mut grid))));
    all &= report(4, catch_unwind(AssertUnwindSafe(|| criterion_4(&mut grid))));
    all &= report(5, catch_unwind(criterion_5));
    all &= report(6, catch_unwind(AssertUnwindSafe(|| criterion_6(&grid))));
    all &= report(7, catch_unwind(AssertUnwindSafe(|| criterion_7(&root.path().join("determinism")))));
    all &= report(8, catch_unwind(AssertUnwindSafe(|| criterion_8(&grid))));
    if !all {
        std::process::exit(1);
    }
}
