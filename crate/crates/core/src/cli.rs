//! The `sonomyo` command-line tool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::cnn::{frame_input, predict_angles, train_cnn, CnnError, CnnModel, TrainingHistory, OUTPUTS};
use crate::config::{Cell, RunConfig};
use crate::kinematics::Finger;
use crate::metrics::{aggregate_rmse, rmse, ConfusionMatrix, MetricsError, RmseCell};
use crate::pipeline::{self, BundleError, FrameTruth, ModelBundle};
use crate::preprocess::{preprocess_session, preprocess_values, PreprocessError};
use crate::split::{shuffled_split, SequentialSplit};
use crate::svc::{confusion, train_svc_with_history, ClassHistory, LabeledFeatures, SvcError, SvcModel};
use crate::synthgen::{generate_session, read_session, write_session, Configuration, Session, SynthError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_MODEL: i32 = 5;

pub const SESSIONS_DIR: &str = "sessions";
pub const SVC_DIR: &str = "svc";
pub const CNN_DIR: &str = "cnn";
pub const BUNDLE_DIR: &str = "bundle";
pub const EVAL_DIR: &str = "eval";
pub const DEMO_DIR: &str = "demo";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Model(_) => EXIT_MODEL,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(m) => CliError::Config(vec![m]),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Config(m) => CliError::Config(vec![m]),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SvcError> for CliError {
    fn from(e: SvcError) -> Self {
        match e {
            SvcError::Format(_) | SvcError::UnknownLabel(_) => CliError::Model(e.to_string()),
            SvcError::InvalidParam(m) => CliError::Config(vec![m]),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CnnError> for CliError {
    fn from(e: CnnError) -> Self {
        match e {
            CnnError::Format(_) | CnnError::ArchitectureMismatch { .. } | CnnError::StaleCache => {
                CliError::Model(e.to_string())
            }
            CnnError::Config(m) | CnnError::Architecture(m) => CliError::Config(vec![m]),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sonomyo", version, about = "Synthetic ultrasound hand tracking: data, training, evaluation and demo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the number of demo frames.
    #[arg(long, global = true, value_name = "N")]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate one session per grid cell.
    Generate,
    /// Train the configuration classifier on all generated sessions.
    TrainSvc,
    /// Train one angle regressor per grid cell.
    TrainCnn,
    /// Score the trained models on their held-out data.
    Eval,
    /// Stream a fresh session through the combined pipeline.
    Demo,
}

/// Load the config file (or defaults), apply flag overrides and validate.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = cli.frames {
        cfg.demo.frames = n;
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    Ok(cfg)
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn session_dir(cfg: &RunConfig, cell: &Cell) -> PathBuf {
    cfg.out_dir.join(SESSIONS_DIR).join(cell.key())
}

fn cnn_path(cfg: &RunConfig, cell: &Cell) -> PathBuf {
    cfg.out_dir.join(CNN_DIR).join(format!("{}.bin", cell.key()))
}

/// Read one grid session, checking it was generated with the current settings.
pub fn load_session(cfg: &RunConfig, cell: &Cell) -> Result<Session> {
    let dir = session_dir(cfg, cell);
    if !dir.is_dir() {
        return Err(CliError::Data(format!(
            "missing dataset: {} (run `sonomyo generate` first)",
            dir.display()
        )));
    }
    let session = read_session(&dir)?;
    let expected = cfg.session_spec(cell.configuration, cell.speed, cell.seed);
    if session.spec != expected {
        return Err(CliError::Data(format!(
            "{} was generated with different settings; regenerate it",
            dir.display()
        )));
    }
    Ok(session)
}

/// Write every grid session plus a manifest.
pub fn cmd_generate(cfg: &RunConfig) -> Result<String> {
    let cells = cfg.cells().map_err(|e| CliError::Config(vec![e]))?;
    let root = cfg.out_dir.join(SESSIONS_DIR);
    write_resolved(&root, cfg)?;
    let counts = cells
        .par_iter()
        .map(|cell| {
            let session = generate_session(&cfg.session_spec(cell.configuration, cell.speed, cell.seed))?;
            write_session(&session_dir(cfg, cell), &session)?;
            Ok(session.len())
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut manifest = String::from("# configuration\tspeed\tseed\tdirectory\tframes\n");
    for (cell, n) in cells.iter().zip(&counts) {
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{n}",
            cell.configuration,
            cell.speed,
            cell.seed,
            cell.key()
        );
    }
    fs::write(root.join(MANIFEST_FILE), manifest)?;
    Ok(format!(
        "generated {} sessions ({} frames) in {}\n",
        cells.len(),
        counts.iter().sum::<usize>(),
        root.display()
    ))
}

/// Per-frame SVC features of every grid session, in grid order.
pub fn svc_dataset(cfg: &RunConfig) -> Result<Vec<LabeledFeatures>> {
    let cells = cfg.cells().map_err(|e| CliError::Config(vec![e]))?;
    let mut data = Vec::new();
    for cell in &cells {
        let session = load_session(cfg, cell)?;
        for frame in &session.frames {
            let features = preprocess_values(frame, &cfg.preprocess.svc)?;
            data.push(LabeledFeatures {
                features,
                label: cell.configuration,
                order: data.len(),
            });
        }
    }
    Ok(data)
}

/// Shuffled train/test partition used by both training and evaluation.
pub fn svc_split(cfg: &RunConfig, data: &[LabeledFeatures]) -> (Vec<LabeledFeatures>, Vec<LabeledFeatures>) {
    let (train, test) = shuffled_split(data.len(), cfg.svc.test_split, cfg.seed);
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| data[i].clone()).collect();
    (pick(train), pick(test))
}

fn svc_history_tsv(history: &[ClassHistory]) -> String {
    let mut out = String::from("# class\tepoch\tobjective\tbest_objective\n");
    for h in history {
        let _ = writeln!(out, "{}\t0\t{}\t{}", h.class, h.initial_objective, h.initial_objective);
        for (e, (obj, best)) in h.epoch_objective.iter().zip(&h.best_objective).enumerate() {
            let _ = writeln!(out, "{}\t{}\t{obj}\t{best}", h.class, e + 1);
        }
    }
    out
}

pub fn cmd_train_svc(cfg: &RunConfig) -> Result<String> {
    let data = svc_dataset(cfg)?;
    let (train, test) = svc_split(cfg, &data);
    let (mut model, history) = train_svc_with_history(&train, cfg.svc.lambda, cfg.svc.epochs, cfg.seed)?;
    model.train_meta.test_split = cfg.svc.test_split;
    let dir = cfg.out_dir.join(SVC_DIR);
    write_resolved(&dir, cfg)?;
    model.save(&dir.join("svc.bin"))?;
    fs::write(dir.join("history.tsv"), svc_history_tsv(&history))?;
    let mut msg = format!(
        "trained SVC on {} samples ({} held out), {} classes -> {}\n",
        train.len(),
        test.len(),
        model.classes.len(),
        dir.display()
    );
    msg.push_str(&assemble_bundle(cfg)?);
    Ok(msg)
}

/// CNN inputs and their flexion targets.
pub type CnnSamples = (Vec<Vec<f64>>, Vec<[f64; OUTPUTS]>);

/// CNN inputs and targets of one session.
pub fn cnn_samples(cfg: &RunConfig, session: &Session) -> Result<CnnSamples> {
    let pre = preprocess_session(session, &cfg.preprocess.cnn)?;
    let inputs = pre.frames.iter().map(frame_input).collect();
    let targets = pre.angles.iter().map(|a| a.flexion).collect();
    Ok((inputs, targets))
}

fn cnn_history_tsv(history: &TrainingHistory) -> String {
    let s = history.split;
    let mut out = format!(
        "# train={} validation={} test={}\n# epoch\tlearning_rate\ttrain_mae\tvalidation_mae\n",
        s.train, s.validation, s.test
    );
    for e in &history.epochs {
        let val = e.validation_mae.map_or_else(|| "nan".to_string(), |v| v.to_string());
        let _ = writeln!(out, "{}\t{}\t{}\t{val}", e.epoch + 1, e.learning_rate, e.train_mae);
    }
    out
}

pub fn cmd_train_cnn(cfg: &RunConfig) -> Result<String> {
    let cells = cfg.cells().map_err(|e| CliError::Config(vec![e]))?;
    let dir = cfg.out_dir.join(CNN_DIR);
    write_resolved(&dir, cfg)?;
    let train_cfg = cfg.cnn_train_config();
    let arch = train_cfg
        .architecture_for(cfg.preprocess.cnn.target_height, cfg.preprocess.cnn.target_width)?;
    let summaries = cells
        .par_iter()
        .map(|cell| {
            let session = load_session(cfg, cell)?;
            let (inputs, targets) = cnn_samples(cfg, &session)?;
            let (model, history) = train_cnn(&inputs, &targets, arch.clone(), &train_cfg)?;
            model.save(&cnn_path(cfg, cell))?;
            fs::write(dir.join(format!("{}.history.tsv", cell.key())), cnn_history_tsv(&history))?;
            let last = history.epochs.last().expect("at least one epoch");
            Ok(format!("{}\ttrain_mae={:.4}\n", cell.key(), last.train_mae))
        })
        .collect::<Result<Vec<String>>>()?;
    let mut msg = format!("trained {} CNNs -> {}\n", cells.len(), dir.display());
    msg.extend(summaries);
    msg.push_str(&assemble_bundle(cfg)?);
    Ok(msg)
}

/// Combine the SVC with the bundle-speed CNNs of the first grid seed once
/// both exist. Returns a one-line note.
pub fn assemble_bundle(cfg: &RunConfig) -> Result<String> {
    let svc_path = cfg.out_dir.join(SVC_DIR).join("svc.bin");
    if !svc_path.exists() {
        return Ok("bundle not assembled yet: SVC missing\n".into());
    }
    let svc = SvcModel::load(&svc_path)?;
    let speed = cfg.bundle_speed().map_err(|e| CliError::Config(vec![e]))?;
    let seed = cfg.grid.seeds[0];
    let mut cnns = BTreeMap::new();
    for &configuration in &svc.classes {
        let cell = Cell {
            configuration,
            speed,
            seed,
        };
        let path = cnn_path(cfg, &cell);
        if !path.exists() {
            return Ok(format!("bundle not assembled yet: {} missing\n", path.display()));
        }
        cnns.insert(configuration, CnnModel::load(&path)?);
    }
    let bundle = ModelBundle::new(svc, cfg.preprocess.svc, cfg.preprocess.cnn, cnns)?;
    let dir = cfg.out_dir.join(BUNDLE_DIR);
    pipeline::save_bundle(&bundle, &dir)?;
    Ok(format!("bundle written to {}\n", dir.display()))
}

/// Held-out per-finger RMSE of one cell's CNN, clamped predictions.
pub fn cell_rmse(cfg: &RunConfig, cell: &Cell, model: &CnnModel, session: &Session) -> Result<[f64; OUTPUTS]> {
    let pre = preprocess_session(session, &cfg.preprocess.cnn)?;
    let split = SequentialSplit::new(pre.len(), cfg.cnn.test_split, cfg.cnn.validation_split);
    let range = split.test_range();
    if range.is_empty() {
        return Err(CliError::Data(format!("{}: empty CNN test set", cell.key())));
    }
    let mut pred: [Vec<f64>; OUTPUTS] = std::array::from_fn(|_| Vec::with_capacity(range.len()));
    let mut truth: [Vec<f64>; OUTPUTS] = std::array::from_fn(|_| Vec::with_capacity(range.len()));
    for k in range {
        let a = predict_angles(model, &pre.frames[k])?;
        for f in 0..OUTPUTS {
            pred[f].push(a.flexion[f]);
            truth[f].push(pre.angles[k].flexion[f]);
        }
    }
    let mut out = [0.0; OUTPUTS];
    for f in 0..OUTPUTS {
        out[f] = rmse(&truth[f], &pred[f])?;
    }
    Ok(out)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let svc_path = cfg.out_dir.join(SVC_DIR).join("svc.bin");
    if !svc_path.exists() {
        return Err(CliError::Model(format!("{} not found (run `sonomyo train-svc`)", svc_path.display())));
    }
    let svc = SvcModel::load(&svc_path)?;
    let data = svc_dataset(cfg)?;
    let (_, test) = svc_split(cfg, &data);
    if test.is_empty() {
        return Err(CliError::Data("SVC test set is empty".into()));
    }
    let cm: ConfusionMatrix = confusion(&svc, &test)?;
    let acc = cm.accuracy()?;

    let cells = cfg.cells().map_err(|e| CliError::Config(vec![e]))?;
    let mut rmse_cells = Vec::new();
    for cell in &cells {
        let path = cnn_path(cfg, cell);
        if !path.exists() {
            return Err(CliError::Model(format!("{} not found (run `sonomyo train-cnn`)", path.display())));
        }
        let model = CnnModel::load(&path)?;
        let session = load_session(cfg, cell)?;
        let per_finger = cell_rmse(cfg, cell, &model, &session)?;
        for finger in Finger::ALL {
            rmse_cells.push(RmseCell {
                configuration: cell.configuration,
                speed: cell.speed,
                seed: cell.seed,
                finger,
                rmse: per_finger[finger.index()],
            });
        }
    }
    let report = aggregate_rmse(&rmse_cells)?;

    let dir = cfg.out_dir.join(EVAL_DIR);
    write_resolved(&dir, cfg)?;
    let accuracy_kv = format!(
        "accuracy={acc}\ntest_samples={}\ncorrect={}\n",
        cm.total(),
        cm.correct()
    );
    fs::write(dir.join("accuracy.txt"), &accuracy_kv)?;
    fs::write(dir.join("confusion.csv"), cm.to_csv())?;
    fs::write(dir.join("confusion.txt"), cm.to_table())?;
    fs::write(dir.join("rmse_cells.csv"), report.cells_csv())?;
    fs::write(dir.join("rmse.txt"), report.to_key_values())?;
    fs::write(dir.join("rmse_report.txt"), report.to_table())?;
    Ok(format!(
        "SVC held-out accuracy {acc:.3}% ({} / {})\n{}",
        cm.correct(),
        cm.total(),
        report.to_table()
    ))
}

pub fn cmd_demo(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.out_dir.join(DEMO_DIR);
    let bundle = pipeline::load_bundle(&cfg.out_dir.join(BUNDLE_DIR))?;
    let n = cfg.demo.frames;
    let (frames, truth) = if n == 0 {
        (Vec::new(), Vec::new())
    } else {
        let configuration: Configuration = cfg.demo.configuration.parse()?;
        let speed = cfg.demo.speed.parse()?;
        let rate = cfg.generator.frame_rate;
        let seconds = (n as f64 / rate).ceil();
        let spec = cfg.session_spec(configuration, speed, cfg.demo.seed).with_timing(seconds, rate);
        let session = generate_session(&spec)?;
        let truth: Vec<FrameTruth> = session
            .angles
            .iter()
            .take(n)
            .map(|&angles| FrameTruth {
                configuration,
                angles,
            })
            .collect();
        (session.frames.into_iter().take(n).collect(), truth)
    };
    let (results, summary) = pipeline::run_pipeline(&bundle, &frames, Some(&truth))?;
    write_resolved(&dir, cfg)?;
    pipeline::write_results_jsonl(&results, BufWriter::new(fs::File::create(dir.join("results.jsonl"))?))?;
    let kv = summary.to_key_values();
    fs::write(dir.join("summary.txt"), &kv)?;
    Ok(kv)
}

pub fn run(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::TrainSvc => cmd_train_svc(&cfg),
        Command::TrainCnn => cmd_train_cnn(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Demo => cmd_demo(&cfg),
    }
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(msg) => {
            print!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("sonomyo: {e}");
            e.exit_code()
        }
    }
}
