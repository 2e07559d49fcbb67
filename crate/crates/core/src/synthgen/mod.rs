//! Deterministic synthetic sessions.
//!
//! A session alternates between the open hand and one hand configuration at
//! a fixed switching rate. From the seeded joint-angle trajectory we derive
//! three views: the per-frame ground-truth angles, a 100 Hz marker stream
//! (with noise and short occlusions) and a stack of ultrasound-like frames
//! rendered by a parametric forward model.
//!
//! Forward model: per finger, a bright band confined to that finger's
//! quarter of the image width; the band drops by a fixed number of rows per
//! degree of flexion and widens by up to 20%. Below the bands, a row of
//! deep-compartment blobs encodes which compartments the configuration
//! recruits, and stays present for the whole session. Multiplicative
//! Gaussian speckle is applied on top.

mod io;

pub use io::{read_session, read_session_meta, write_session, SessionMeta};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::kinematics::{
    KinematicsError, MarkerFrame, McpAngles, Point3, TriggerEvent, FINGER_COUNT, MARKERS_PER_FINGER,
};

pub const MOCAP_RATE_HZ: f64 = 100.0;
/// Delay between the ultrasound frame and its trigger reaching the mocap clock.
pub const TRIGGER_LATENCY_S: f64 = 0.001;
pub const JITTER_FRACTION: f64 = 0.05;
pub const MARKER_NOISE_MM: f64 = 0.02;
/// Per marker, per mocap sample probability that an occlusion starts.
pub const OCCLUSION_START_PROB: f64 = 5e-4;
pub const MAX_SYNTH_OCCLUSION: usize = 3;

pub const BACKGROUND_LEVEL: f64 = 0.05;
pub const BAND_PEAK: f64 = 0.8;
pub const COMPARTMENT_PEAK: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid session spec: {0}")]
    InvalidSpec(String),
    #[error("unknown {kind} '{value}'")]
    UnknownName { kind: &'static str, value: String },
    #[error("session format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// The eleven activity-of-daily-living configurations plus the open hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Configuration {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    C9,
    C10,
    C11,
    Open,
}

impl Configuration {
    /// The classifiable configurations, in class order.
    pub const CLASSES: [Configuration; 11] = [
        Configuration::C1,
        Configuration::C2,
        Configuration::C3,
        Configuration::C4,
        Configuration::C5,
        Configuration::C6,
        Configuration::C7,
        Configuration::C8,
        Configuration::C9,
        Configuration::C10,
        Configuration::C11,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Configuration::C1 => "C1",
            Configuration::C2 => "C2",
            Configuration::C3 => "C3",
            Configuration::C4 => "C4",
            Configuration::C5 => "C5",
            Configuration::C6 => "C6",
            Configuration::C7 => "C7",
            Configuration::C8 => "C8",
            Configuration::C9 => "C9",
            Configuration::C10 => "C10",
            Configuration::C11 => "C11",
            Configuration::Open => "Open",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Configuration::C1 => "IndFlex",
            Configuration::C2 => "MidFlex",
            Configuration::C3 => "RinFlex",
            Configuration::C4 => "PinFlex",
            Configuration::C5 => "IndPinch",
            Configuration::C6 => "IndMidPinch",
            Configuration::C7 => "IndMidRinPinch",
            Configuration::C8 => "AllPinch",
            Configuration::C9 => "MidRinPinch",
            Configuration::C10 => "Fist",
            Configuration::C11 => "Hook",
            Configuration::Open => "Open",
        }
    }

    /// Position in [`Self::CLASSES`]; `Open` maps to 11.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Default per-finger MCP flexion amplitude in degrees (index, middle,
    /// ring, pinky).
    pub fn default_amplitudes(self) -> [f64; FINGER_COUNT] {
        const FLEX: f64 = 60.0;
        const PINCH: f64 = 45.0;
        const ALL_PINCH: f64 = 40.0;
        const FIST: f64 = 90.0;
        match self {
            Configuration::C1 => [FLEX, 0.0, 0.0, 0.0],
            Configuration::C2 => [0.0, FLEX, 0.0, 0.0],
            Configuration::C3 => [0.0, 0.0, FLEX, 0.0],
            Configuration::C4 => [0.0, 0.0, 0.0, FLEX],
            Configuration::C5 => [PINCH, 0.0, 0.0, 0.0],
            Configuration::C6 => [PINCH, PINCH, 0.0, 0.0],
            Configuration::C7 => [PINCH, PINCH, PINCH, 0.0],
            Configuration::C8 => [ALL_PINCH; 4],
            Configuration::C9 => [0.0, PINCH, PINCH, 0.0],
            Configuration::C10 => [FIST; 4],
            Configuration::C11 | Configuration::Open => [0.0; 4],
        }
    }

    /// Deep compartments recruited by the configuration: the 4-bit binary
    /// code of `ordinal + 1`, so every class has a distinct pattern and the
    /// open hand recruits none.
    pub fn compartment_pattern(self) -> [bool; 4] {
        let code = match self {
            Configuration::Open => 0,
            c => c.ordinal() + 1,
        };
        [0, 1, 2, 3].map(|bit| code & (1 << bit) != 0)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Configuration {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        Configuration::CLASSES
            .iter()
            .chain(std::iter::once(&Configuration::Open))
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s) || c.description().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownName {
                kind: "configuration",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandConfiguration {
    pub id: Configuration,
    pub involvement: [f64; FINGER_COUNT],
    pub mcp_frozen: bool,
}

impl HandConfiguration {
    pub fn new(id: Configuration) -> Self {
        Self {
            id,
            involvement: id.default_amplitudes(),
            mcp_frozen: id == Configuration::C11,
        }
    }
}

impl From<Configuration> for HandConfiguration {
    fn from(id: Configuration) -> Self {
        Self::new(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speed {
    Slow,
    Medium,
    Fast,
}

impl Speed {
    pub const ALL: [Speed; 3] = [Speed::Slow, Speed::Medium, Speed::Fast];

    /// Rest/motion switching frequency.
    pub fn hz(self) -> f64 {
        match self {
            Speed::Slow => 0.5,
            Speed::Medium => 1.0,
            Speed::Fast => 2.0,
        }
    }

    /// Full rest→flex→rest cycles per second: two switches per cycle.
    pub fn cycle_hz(self) -> f64 {
        self.hz() / 2.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Speed::Slow => "slow",
            Speed::Medium => "medium",
            Speed::Fast => "fast",
        }
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Speed {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        Speed::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownName {
                kind: "speed",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub configuration: HandConfiguration,
    pub speed: Speed,
    pub duration: f64,
    pub frame_rate: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub seed: u64,
    pub noise_level: f64,
}

fn integral_count(seconds: f64, rate: f64, what: &str) -> Result<usize> {
    let exact = seconds * rate;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 || rounded < 0.0 {
        return Err(SynthError::InvalidSpec(format!(
            "{what}: duration {seconds} s at {rate} Hz is not a whole number of samples"
        )));
    }
    Ok(rounded as usize)
}

impl SessionSpec {
    /// 56 s at 25 Hz, 636 x 256 frames, noise 0.1.
    pub fn new(configuration: Configuration, speed: Speed, seed: u64) -> Self {
        Self {
            configuration: configuration.into(),
            speed,
            duration: 56.0,
            frame_rate: 25.0,
            image_height: 636,
            image_width: 256,
            seed,
            noise_level: 0.1,
        }
    }

    pub fn with_dims(mut self, height: usize, width: usize) -> Self {
        self.image_height = height;
        self.image_width = width;
        self
    }

    pub fn with_noise(mut self, noise_level: f64) -> Self {
        self.noise_level = noise_level;
        self
    }

    pub fn with_timing(mut self, duration: f64, frame_rate: f64) -> Self {
        self.duration = duration;
        self.frame_rate = frame_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if self.image_height < 8 || self.image_width < 8 {
            return bad(format!(
                "image must be at least 8x8, got {}x{}",
                self.image_height, self.image_width
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad(format!("noise_level must lie in [0, 1], got {}", self.noise_level));
        }
        if let Some(a) = self.configuration.involvement.iter().find(|a| !(0.0..=100.0).contains(*a)) {
            return bad(format!("amplitude {a} outside [0, 100] degrees"));
        }
        self.frame_count()?;
        self.mocap_count()?;
        Ok(())
    }

    pub fn frame_count(&self) -> Result<usize> {
        integral_count(self.duration, self.frame_rate, "frames")
    }

    pub fn mocap_count(&self) -> Result<usize> {
        integral_count(self.duration, MOCAP_RATE_HZ, "mocap samples")
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }
}

/// A 2-D intensity image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundFrame {
    pub height: usize,
    pub width: usize,
    pub frame_index: u64,
    pub pixels: Vec<f32>,
}

impl UltrasoundFrame {
    pub fn new(height: usize, width: usize, frame_index: u64, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer does not match dims");
        Self {
            height,
            width,
            frame_index,
            pixels,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub spec: SessionSpec,
    pub frames: Vec<UltrasoundFrame>,
    pub angles: Vec<McpAngles>,
    pub triggers: Vec<TriggerEvent>,
    pub mocap: Vec<MarkerFrame>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

// Independent RNG streams per session aspect.
const STREAM_JITTER: u64 = 1;
const STREAM_MARKERS: u64 = 2;
const STREAM_SPECKLE: u64 = 3;

pub fn session_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Continuous-time flexion trajectory of a session: a raised cosine per
/// cycle, with a seeded per-cycle, per-finger amplitude factor.
#[derive(Debug, Clone)]
pub struct Trajectory {
    cycle_hz: f64,
    amplitudes: [f64; FINGER_COUNT],
    jitter: Vec<[f64; FINGER_COUNT]>,
}

impl Trajectory {
    pub fn new(spec: &SessionSpec) -> Self {
        let cycle_hz = spec.speed.cycle_hz();
        // One spare cycle covers sample times at the very end of the span.
        let cycles = (spec.duration * cycle_hz).ceil() as usize + 1;
        let mut rng = session_rng(spec.seed, STREAM_JITTER);
        let jitter = (0..cycles)
            .map(|_| [(); FINGER_COUNT].map(|_| 1.0 + rng.random_range(-JITTER_FRACTION..=JITTER_FRACTION)))
            .collect();
        let amplitudes = if spec.configuration.mcp_frozen {
            [0.0; FINGER_COUNT]
        } else {
            spec.configuration.involvement
        };
        Self {
            cycle_hz,
            amplitudes,
            jitter,
        }
    }

    pub fn flexion(&self, t: f64) -> [f64; FINGER_COUNT] {
        let phase = t * self.cycle_hz;
        let cycle = (phase.floor().max(0.0) as usize).min(self.jitter.len() - 1);
        let shape = 0.5 * (1.0 - (std::f64::consts::TAU * phase).cos());
        let j = &self.jitter[cycle];
        [0, 1, 2, 3].map(|f| (self.amplitudes[f] * j[f] * shape).clamp(0.0, 100.0))
    }
}

/// Ground-truth angles at every frame time.
pub fn trajectory(spec: &SessionSpec) -> Result<Vec<McpAngles>> {
    spec.validate()?;
    let traj = Trajectory::new(spec);
    let n = spec.frame_count()?;
    Ok((0..n)
        .map(|k| McpAngles::from_flexion(traj.flexion(spec.frame_time(k))))
        .collect())
}

/// Pixel-space layout of the forward model for a given image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandGeometry {
    pub height: usize,
    pub width: usize,
    /// Band centre row at zero flexion.
    pub rest_row: f64,
    pub px_per_degree: f64,
    /// Vertical band sigma at 50° flexion; scales by 0.8..1.2 over 0..100°.
    pub sigma_rows: f64,
    pub sigma_cols: f64,
    pub compartment_row: f64,
    pub compartment_sigma: f64,
}

impl BandGeometry {
    pub fn for_dims(height: usize, width: usize) -> Self {
        let h = height as f64;
        let quarter = width as f64 / 4.0;
        Self {
            height,
            width,
            rest_row: 0.15 * h,
            px_per_degree: 0.004 * h,
            sigma_rows: 0.025 * h,
            sigma_cols: quarter / 4.0,
            compartment_row: 0.82 * h,
            compartment_sigma: (0.03 * h).min(quarter / 4.0),
        }
    }

    pub fn center_col(&self, finger: usize) -> f64 {
        (finger as f64 + 0.5) * self.width as f64 / 4.0
    }

    pub fn band_row(&self, flexion: f64) -> f64 {
        self.rest_row + self.px_per_degree * flexion
    }

    pub fn band_sigma(&self, flexion: f64) -> f64 {
        self.sigma_rows * (0.8 + 0.4 * flexion / 100.0)
    }
}

fn gaussian_profile(len: usize, center: f64, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let d = (i as f64 - center) / sigma;
            (-0.5 * d * d).exp()
        })
        .collect()
}

/// Render one frame. Intensities lie in `[0, 1]`.
pub fn forward_model<R: Rng + ?Sized>(
    angles: &McpAngles,
    spec: &SessionSpec,
    frame_index: u64,
    rng: &mut R,
) -> UltrasoundFrame {
    let geo = BandGeometry::for_dims(spec.image_height, spec.image_width);
    let (h, w) = (geo.height, geo.width);
    let cols: Vec<Vec<f64>> = (0..FINGER_COUNT)
        .map(|f| gaussian_profile(w, geo.center_col(f), geo.sigma_cols))
        .collect();
    let rows: Vec<Vec<f64>> = (0..FINGER_COUNT)
        .map(|f| {
            let flex = angles.flexion[f];
            gaussian_profile(h, geo.band_row(flex), geo.band_sigma(flex))
        })
        .collect();
    let pattern = spec.configuration.id.compartment_pattern();
    let deep_rows = gaussian_profile(h, geo.compartment_row, geo.compartment_sigma);
    let deep_cols: Vec<Vec<f64>> = (0..4)
        .map(|j| gaussian_profile(w, geo.center_col(j), geo.compartment_sigma))
        .collect();

    let mut pixels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut v = BACKGROUND_LEVEL;
            for f in 0..FINGER_COUNT {
                v += BAND_PEAK * rows[f][r] * cols[f][c];
            }
            for (j, &on) in pattern.iter().enumerate() {
                if on {
                    v += COMPARTMENT_PEAK * deep_rows[r] * deep_cols[j][c];
                }
            }
            if spec.noise_level > 0.0 {
                let g: f64 = rng.sample(StandardNormal);
                v *= (1.0 + spec.noise_level * g).max(0.0);
            }
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    UltrasoundFrame::new(h, w, frame_index, pixels)
}

/// Marker layout of a hand whose fingers are flexed by `flexion` degrees.
/// The metacarpal vector points along +x; an extended phalanx along -x.
pub fn hand_markers(flexion: [f64; FINGER_COUNT]) -> [[Point3; MARKERS_PER_FINGER]; FINGER_COUNT] {
    const ORIGIN: Point3 = Point3::new(120.0, 40.0, 200.0);
    const METACARPAL_MM: f64 = 45.0;
    const PHALANX_MM: f64 = 30.0;
    const KNUCKLE_GAP_MM: f64 = 6.0;
    const FINGER_SPACING_MM: f64 = 20.0;
    [0, 1, 2, 3].map(|f| {
        let knuckle = ORIGIN + Point3::new(0.0, FINGER_SPACING_MM * f as f64, 0.0);
        let theta = flexion[f].to_radians();
        let p1 = knuckle - Point3::new(KNUCKLE_GAP_MM, 0.0, 0.0);
        [
            knuckle,
            knuckle + Point3::new(METACARPAL_MM, 0.0, 0.0),
            p1,
            p1 + Point3::new(-theta.cos(), 0.0, theta.sin()) * PHALANX_MM,
        ]
    })
}

fn synthesize_mocap(spec: &SessionSpec, traj: &Trajectory) -> Result<Vec<MarkerFrame>> {
    let n = spec.mocap_count()?;
    let mut rng = session_rng(spec.seed, STREAM_MARKERS);
    let mut remaining = [[0usize; MARKERS_PER_FINGER]; FINGER_COUNT];
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / MOCAP_RATE_HZ;
        let mut frame = MarkerFrame::new(t, hand_markers(traj.flexion(t)));
        for f in 0..FINGER_COUNT {
            for m in 0..MARKERS_PER_FINGER {
                let p = &mut frame.positions[f][m];
                p.x += MARKER_NOISE_MM * rng.sample::<f64, _>(StandardNormal);
                p.y += MARKER_NOISE_MM * rng.sample::<f64, _>(StandardNormal);
                p.z += MARKER_NOISE_MM * rng.sample::<f64, _>(StandardNormal);
                if remaining[f][m] == 0 && rng.random::<f64>() < OCCLUSION_START_PROB {
                    remaining[f][m] = rng.random_range(1..=MAX_SYNTH_OCCLUSION);
                }
                if remaining[f][m] > 0 {
                    remaining[f][m] -= 1;
                    frame.occluded[f][m] = true;
                    *p = Point3::new(f64::NAN, f64::NAN, f64::NAN);
                }
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn triggers(spec: &SessionSpec) -> Result<Vec<TriggerEvent>> {
    Ok((0..spec.frame_count()?)
        .map(|k| TriggerEvent {
            timestamp: spec.frame_time(k) + TRIGGER_LATENCY_S,
            frame_index: k as u64,
        })
        .collect())
}

/// Build a full session from its spec. Pure in `spec` (including the seed).
pub fn generate_session(spec: &SessionSpec) -> Result<Session> {
    spec.validate()?;
    let traj = Trajectory::new(spec);
    let angles = trajectory(spec)?;
    let mocap = synthesize_mocap(spec, &traj)?;
    let triggers = triggers(spec)?;
    let mut rng = session_rng(spec.seed, STREAM_SPECKLE);
    let frames = angles
        .iter()
        .enumerate()
        .map(|(k, a)| forward_model(a, spec, k as u64, &mut rng))
        .collect();
    Ok(Session {
        spec: spec.clone(),
        frames,
        angles,
        triggers,
        mocap,
    })
}
