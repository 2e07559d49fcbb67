//! Two-stage streaming predictor: classify the hand configuration of each
//! frame with the SVC, then regress its MCP angles with the CNN trained for
//! that configuration. Frames are processed independently.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::binio::DecodeError;
use crate::cnn::{predict_angles, CnnError, CnnModel};
use crate::kinematics::{Finger, McpAngles, FINGER_COUNT};
use crate::kv::{self, KvWriter};
use crate::metrics;
use crate::preprocess::{preprocess_frame, preprocess_values, PreprocessConfig, PreprocessError};
use crate::svc::{SvcError, SvcModel};
use crate::synthgen::{Configuration, UltrasoundFrame};

pub const BUNDLE_FORMAT: &str = "sonomyo-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const BUNDLE_META: &str = "bundle.txt";
pub const SVC_FILE: &str = "svc.bin";
pub const CNN_DIR: &str = "cnn";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle file missing: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: unsupported version {found} (expected {expected})")]
    Version { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("no CNN model for configuration {0}")]
    CoverageGap(Configuration),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Svc(SvcError),
    #[error(transparent)]
    Cnn(CnnError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BundleError>;

/// Classifier, per-configuration regressors and the preprocessing each
/// stage expects.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub svc: SvcModel,
    pub svc_preprocess: PreprocessConfig,
    pub cnn_preprocess: PreprocessConfig,
    pub cnn_by_configuration: BTreeMap<Configuration, CnnModel>,
}

impl ModelBundle {
    /// Assemble a bundle, checking that every SVC class has a CNN.
    pub fn new(
        svc: SvcModel,
        svc_preprocess: PreprocessConfig,
        cnn_preprocess: PreprocessConfig,
        cnn_by_configuration: BTreeMap<Configuration, CnnModel>,
    ) -> Result<Self> {
        if let Some(&missing) = svc.classes.iter().find(|c| !cnn_by_configuration.contains_key(c)) {
            return Err(BundleError::CoverageGap(missing));
        }
        Ok(Self {
            svc,
            svc_preprocess,
            cnn_preprocess,
            cnn_by_configuration,
        })
    }
}

fn decode_error(path: &Path, e: DecodeError) -> BundleError {
    match e {
        DecodeError::Version { expected, found } => BundleError::Version {
            path: path.to_path_buf(),
            expected,
            found,
        },
        other => BundleError::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn read_required(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(BundleError::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

pub fn cnn_file_name(configuration: Configuration) -> String {
    format!("{}.bin", configuration.name())
}

fn write_preprocess(w: &mut KvWriter, prefix: &str, cfg: &PreprocessConfig) {
    w.put(&format!("{prefix}_target_height"), cfg.target_height)
        .put(&format!("{prefix}_target_width"), cfg.target_width)
        .put(&format!("{prefix}_log_dynamic_range"), cfg.log_dynamic_range);
}

fn read_preprocess(map: &BTreeMap<String, String>, prefix: &str) -> std::result::Result<PreprocessConfig, String> {
    let mut cfg = PreprocessConfig::new(
        kv::get(map, &format!("{prefix}_target_height"))?,
        kv::get(map, &format!("{prefix}_target_width"))?,
    );
    cfg.log_dynamic_range = kv::get(map, &format!("{prefix}_log_dynamic_range"))?;
    Ok(cfg)
}

/// Write `bundle.txt`, `svc.bin` and `cnn/<configuration>.bin`.
pub fn save_bundle(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(CNN_DIR))?;
    let mut w = KvWriter::new();
    w.put("format", BUNDLE_FORMAT).put("version", BUNDLE_VERSION);
    let classes: Vec<&str> = bundle.svc.classes.iter().map(|c| c.name()).collect();
    w.put("classes", classes.join(","));
    write_preprocess(&mut w, "svc", &bundle.svc_preprocess);
    write_preprocess(&mut w, "cnn", &bundle.cnn_preprocess);
    fs::write(dir.join(BUNDLE_META), w.finish())?;
    fs::write(dir.join(SVC_FILE), bundle.svc.to_bytes())?;
    for (c, model) in &bundle.cnn_by_configuration {
        fs::write(dir.join(CNN_DIR).join(cnn_file_name(*c)), model.to_bytes())?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    let meta_path = dir.join(BUNDLE_META);
    let text = String::from_utf8(read_required(&meta_path)?).map_err(|_| BundleError::Format {
        path: meta_path.clone(),
        reason: "not UTF-8".into(),
    })?;
    let format_err = |reason: String| BundleError::Format {
        path: meta_path.clone(),
        reason,
    };
    let map = kv::parse(&text).map_err(format_err)?;
    let format: String = kv::get(&map, "format").map_err(format_err)?;
    if format != BUNDLE_FORMAT {
        return Err(format_err(format!("format is '{format}', expected '{BUNDLE_FORMAT}'")));
    }
    let version: u32 = kv::get(&map, "version").map_err(format_err)?;
    if version != BUNDLE_VERSION {
        return Err(BundleError::Version {
            path: meta_path,
            expected: BUNDLE_VERSION,
            found: version,
        });
    }
    let svc_preprocess = read_preprocess(&map, "svc").map_err(format_err)?;
    let cnn_preprocess = read_preprocess(&map, "cnn").map_err(format_err)?;

    let svc_path = dir.join(SVC_FILE);
    let svc = SvcModel::from_bytes(&read_required(&svc_path)?).map_err(|e| match e {
        SvcError::Format(d) => decode_error(&svc_path, d),
        other => BundleError::Svc(other),
    })?;
    let mut cnn_by_configuration = BTreeMap::new();
    for &c in &svc.classes {
        let path = dir.join(CNN_DIR).join(cnn_file_name(c));
        let bytes = match read_required(&path) {
            Ok(b) => b,
            Err(BundleError::MissingFile(_)) => return Err(BundleError::CoverageGap(c)),
            Err(e) => return Err(e),
        };
        let model = CnnModel::from_bytes(&bytes).map_err(|e| match e {
            CnnError::Format(d) => decode_error(&path, d),
            other => BundleError::Format {
                path: path.clone(),
                reason: other.to_string(),
            },
        })?;
        cnn_by_configuration.insert(c, model);
    }
    ModelBundle::new(svc, svc_preprocess, cnn_preprocess, cnn_by_configuration)
}

/// Wall-clock seconds per stage for one frame. The SVC stage includes its
/// preprocessing, as does the CNN stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timings {
    pub svc_seconds: f64,
    pub cnn_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTruth {
    pub configuration: Configuration,
    pub angles: McpAngles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: u64,
    pub configuration: Configuration,
    pub angles: McpAngles,
    pub truth: Option<FrameTruth>,
    pub timings: Timings,
}

/// Hooks called as each frame moves through the stages.
pub trait StageObserver {
    fn classified(&mut self, _frame_index: u64, _configuration: Configuration) {}
    fn regressor_selected(&mut self, _frame_index: u64, _key: Configuration) {}
}

/// Observer that ignores every event.
pub struct NoObserver;

impl StageObserver for NoObserver {}

fn elapsed(since: Instant) -> f64 {
    // Clamp to a nanosecond so every recorded stage time is positive.
    since.elapsed().as_secs_f64().max(1e-9)
}

/// Run one frame through both stages.
pub fn process_frame(
    bundle: &ModelBundle,
    frame: &UltrasoundFrame,
    observer: &mut dyn StageObserver,
) -> Result<(Configuration, McpAngles, Timings)> {
    let start = Instant::now();
    let features = preprocess_values(frame, &bundle.svc_preprocess)?;
    let (configuration, _) = bundle.svc.predict(&features).map_err(BundleError::Svc)?;
    let svc_seconds = elapsed(start);
    observer.classified(frame.frame_index, configuration);

    let cnn_start = Instant::now();
    let model = bundle
        .cnn_by_configuration
        .get(&configuration)
        .ok_or(BundleError::CoverageGap(configuration))?;
    observer.regressor_selected(frame.frame_index, configuration);
    let input = preprocess_frame(frame, &bundle.cnn_preprocess)?;
    let angles = predict_angles(model, &input).map_err(BundleError::Cnn)?;
    let cnn_seconds = elapsed(cnn_start);
    let total_seconds = elapsed(start).max(svc_seconds + cnn_seconds);
    Ok((
        configuration,
        angles,
        Timings {
            svc_seconds,
            cnn_seconds,
            total_seconds,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl StageStats {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        Some(Self {
            mean: values.clone().sum::<f64>() / n as f64,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub frames: usize,
    pub svc: Option<StageStats>,
    pub cnn: Option<StageStats>,
    pub total: Option<StageStats>,
    /// `1 / mean(total_seconds)`; 0 for an empty stream.
    pub throughput_hz: f64,
    /// Percentage of frames whose predicted configuration matches the truth.
    pub accuracy: Option<f64>,
    pub rmse_per_finger: Option<[f64; FINGER_COUNT]>,
}

impl PipelineSummary {
    pub fn from_results(results: &[FrameResult]) -> Result<Self> {
        let svc = StageStats::of(results.iter().map(|r| r.timings.svc_seconds));
        let cnn = StageStats::of(results.iter().map(|r| r.timings.cnn_seconds));
        let total = StageStats::of(results.iter().map(|r| r.timings.total_seconds));
        let with_truth: Vec<(&FrameResult, &FrameTruth)> =
            results.iter().filter_map(|r| r.truth.as_ref().map(|t| (r, t))).collect();
        let (accuracy, rmse_per_finger) = if with_truth.is_empty() {
            (None, None)
        } else {
            let truth: Vec<Configuration> = with_truth.iter().map(|(_, t)| t.configuration).collect();
            let pred: Vec<Configuration> = with_truth.iter().map(|(r, _)| r.configuration).collect();
            let mut rmse = [0.0; FINGER_COUNT];
            for (f, slot) in rmse.iter_mut().enumerate() {
                let t: Vec<f64> = with_truth.iter().map(|(_, t)| t.angles.flexion[f]).collect();
                let p: Vec<f64> = with_truth.iter().map(|(r, _)| r.angles.flexion[f]).collect();
                *slot = metrics::rmse(&t, &p)?;
            }
            (Some(metrics::accuracy(&truth, &pred)?), Some(rmse))
        };
        Ok(Self {
            frames: results.len(),
            svc,
            cnn,
            total,
            throughput_hz: total.map_or(0.0, |t| 1.0 / t.mean),
            accuracy,
            rmse_per_finger,
        })
    }

    pub fn to_key_values(&self) -> String {
        let mut w = KvWriter::new();
        w.put("frames", self.frames);
        for (name, stats) in [("svc", self.svc), ("cnn", self.cnn), ("total", self.total)] {
            if let Some(s) = stats {
                w.put(&format!("{name}_seconds_mean"), s.mean)
                    .put(&format!("{name}_seconds_min"), s.min)
                    .put(&format!("{name}_seconds_max"), s.max);
            }
        }
        w.put("throughput_hz", self.throughput_hz);
        if let Some(a) = self.accuracy {
            w.put("accuracy", a);
        }
        if let Some(r) = self.rmse_per_finger {
            for f in Finger::ALL {
                w.put(&format!("rmse_{}", f.name()), r[f.index()]);
            }
        }
        w.finish()
    }
}

fn check_truth(frames: &[UltrasoundFrame], truth: Option<&[FrameTruth]>) -> Result<()> {
    if let Some(t) = truth {
        if t.len() != frames.len() {
            return Err(metrics::MetricsError::LengthMismatch {
                left: frames.len(),
                right: t.len(),
            }
            .into());
        }
    }
    Ok(())
}

/// Sequential per-frame loop, reporting stage events to `observer`.
pub fn run_pipeline_observed(
    bundle: &ModelBundle,
    frames: &[UltrasoundFrame],
    truth: Option<&[FrameTruth]>,
    observer: &mut dyn StageObserver,
) -> Result<(Vec<FrameResult>, PipelineSummary)> {
    check_truth(frames, truth)?;
    let mut results = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        let (configuration, angles, timings) = process_frame(bundle, frame, observer)?;
        results.push(FrameResult {
            frame_index: frame.frame_index,
            configuration,
            angles,
            truth: truth.map(|t| t[k]),
            timings,
        });
    }
    let summary = PipelineSummary::from_results(&results)?;
    Ok((results, summary))
}

pub fn run_pipeline(
    bundle: &ModelBundle,
    frames: &[UltrasoundFrame],
    truth: Option<&[FrameTruth]>,
) -> Result<(Vec<FrameResult>, PipelineSummary)> {
    run_pipeline_observed(bundle, frames, truth, &mut NoObserver)
}

/// Batch evaluation across threads. Predictions equal the sequential
/// loop's; timings reflect contended execution.
pub fn run_pipeline_parallel(
    bundle: &ModelBundle,
    frames: &[UltrasoundFrame],
    truth: Option<&[FrameTruth]>,
) -> Result<(Vec<FrameResult>, PipelineSummary)> {
    check_truth(frames, truth)?;
    let results = frames
        .par_iter()
        .enumerate()
        .map(|(k, frame)| {
            let (configuration, angles, timings) = process_frame(bundle, frame, &mut NoObserver)?;
            Ok(FrameResult {
                frame_index: frame.frame_index,
                configuration,
                angles,
                truth: truth.map(|t| t[k]),
                timings,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = PipelineSummary::from_results(&results)?;
    Ok((results, summary))
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    frame_index: u64,
    configuration: &'a str,
    flexion: [f64; FINGER_COUNT],
    saturated: [bool; FINGER_COUNT],
    #[serde(skip_serializing_if = "Option::is_none")]
    true_configuration: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_flexion: Option<[f64; FINGER_COUNT]>,
    svc_seconds: f64,
    cnn_seconds: f64,
    total_seconds: f64,
}

/// One JSON object per line.
pub fn write_results_jsonl<W: Write>(results: &[FrameResult], mut out: W) -> std::io::Result<()> {
    for r in results {
        let rec = FrameRecord {
            frame_index: r.frame_index,
            configuration: r.configuration.name(),
            flexion: r.angles.flexion,
            saturated: r.angles.saturated,
            true_configuration: r.truth.map(|t| t.configuration.name()),
            true_flexion: r.truth.map(|t| t.angles.flexion),
            svc_seconds: r.timings.svc_seconds,
            cnn_seconds: r.timings.cnn_seconds,
            total_seconds: r.timings.total_seconds,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
