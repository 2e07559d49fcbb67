//! Frame conditioning: per-frame min-max normalisation, log compression and
//! block mean-pooling, applied in that order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthgen::{Session, UltrasoundFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("preprocess config error: {0}")]
    Config(String),
    #[error("frame is empty")]
    EmptyFrame,
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    #[default]
    PerFrameMinmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Ratio `R` in `log(1 + R x) / log(1 + R)`; 1000 is a 60 dB display range.
    #[serde(default = "default_dynamic_range")]
    pub log_dynamic_range: f64,
    pub target_height: usize,
    pub target_width: usize,
    #[serde(default)]
    pub normalize_mode: NormalizeMode,
}

fn default_dynamic_range() -> f64 {
    1000.0
}

impl PreprocessConfig {
    pub fn new(target_height: usize, target_width: usize) -> Self {
        Self {
            log_dynamic_range: default_dynamic_range(),
            target_height,
            target_width,
            normalize_mode: NormalizeMode::PerFrameMinmax,
        }
    }

    /// Check the config against a source frame size.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        if !(self.log_dynamic_range > 1.0 && self.log_dynamic_range.is_finite()) {
            return Err(PreprocessError::Config(format!(
                "log_dynamic_range must be > 1, got {}",
                self.log_dynamic_range
            )));
        }
        if self.target_height == 0
            || self.target_width == 0
            || !height.is_multiple_of(self.target_height)
            || !width.is_multiple_of(self.target_width)
        {
            return Err(PreprocessError::Config(format!(
                "target {}x{} does not divide source {}x{}",
                self.target_height, self.target_width, height, width
            )));
        }
        Ok(())
    }

    pub fn output_len(&self) -> usize {
        self.target_height * self.target_width
    }
}

/// `log(1 + R x) / log(1 + R)`; maps `[0, 1]` onto `[0, 1]`, strictly increasing.
pub fn log_compress(x: f64, dynamic_range: f64) -> f64 {
    (dynamic_range * x).ln_1p() / dynamic_range.ln_1p()
}

/// Steps 1 and 2 (normalise, log-compress) at source resolution.
pub fn normalize_and_compress(frame: &UltrasoundFrame, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    if frame.pixels.is_empty() {
        return Err(PreprocessError::EmptyFrame);
    }
    let (lo, hi) = frame
        .pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p as f64), hi.max(p as f64))
        });
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(vec![0.0; frame.pixels.len()]);
    }
    Ok(frame
        .pixels
        .iter()
        .map(|&p| log_compress((p as f64 - lo) / span, cfg.log_dynamic_range))
        .collect())
}

/// Non-overlapping block means of a row-major `height x width` image.
pub fn block_mean_pool(data: &[f64], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let (bh, bw) = (height / out_h, width / out_w);
    let scale = 1.0 / (bh * bw) as f64;
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..height {
        let orow = (r / bh) * out_w;
        let src = &data[r * width..(r + 1) * width];
        for (c, &v) in src.iter().enumerate() {
            out[orow + c / bw] += v;
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Full conditioning pipeline, returned at `f64` precision.
pub fn preprocess_values(frame: &UltrasoundFrame, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    cfg.validate_for(frame.height, frame.width)?;
    let compressed = normalize_and_compress(frame, cfg)?;
    Ok(block_mean_pool(
        &compressed,
        frame.height,
        frame.width,
        cfg.target_height,
        cfg.target_width,
    ))
}

pub fn preprocess_frame(frame: &UltrasoundFrame, cfg: &PreprocessConfig) -> Result<UltrasoundFrame> {
    let values = preprocess_values(frame, cfg)?;
    Ok(UltrasoundFrame::new(
        cfg.target_height,
        cfg.target_width,
        frame.frame_index,
        values.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Apply [`preprocess_frame`] to every frame. Angles, triggers, mocap and the
/// generating spec are carried over unchanged.
pub fn preprocess_session(session: &Session, cfg: &PreprocessConfig) -> Result<Session> {
    let frames = session
        .frames
        .iter()
        .map(|f| preprocess_frame(f, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Session {
        spec: session.spec.clone(),
        frames,
        angles: session.angles.clone(),
        triggers: session.triggers.clone(),
        mocap: session.mocap.clone(),
    })
}
