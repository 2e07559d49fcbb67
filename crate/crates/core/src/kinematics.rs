//! Ground-truth MCP joint angles from motion-capture markers.
//!
//! Each of the four long fingers carries four markers: `M1`/`M2` on the
//! metacarpal and `P1`/`P2` on the proximal phalanx. Flexion is the unsigned
//! deviation of the phalanx vector `P1→P2` from full extension, where full
//! extension is the posture in which `P1→P2` is anti-parallel to `M1→M2`
//! (display angle 180°). Display angles are `180 + flexion`.
//!
//! The module also aligns the (faster) motion-capture stream to the
//! ultrasound frame triggers by nearest-timestamp lookup.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use thiserror::Error;

/// Flexion values reported downstream are clamped to this ceiling.
pub const MAX_FLEXION_DEG: f64 = 100.0;
/// Longest occlusion run (in frames) that is bridged by interpolation and
/// still counted as valid.
pub const MAX_INTERPOLATED_GAP: usize = 5;
/// Display angle of a fully extended finger.
pub const EXTENSION_DISPLAY_DEG: f64 = 180.0;

pub const FINGER_COUNT: usize = 4;
pub const MARKERS_PER_FINGER: usize = 4;
pub const MARKER_COUNT: usize = FINGER_COUNT * MARKERS_PER_FINGER;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("degenerate (zero-length) marker vector on the {finger} finger")]
    DegenerateVector { finger: Finger },
    #[error("non-finite marker coordinate on the {finger} finger at frame {frame}")]
    NonFinite { finger: Finger, frame: usize },
    #[error("marker stream is empty")]
    EmptyStream,
    #[error("timestamps must strictly increase (frame {frame})")]
    NonMonotonic { frame: usize },
    #[error("the {finger} finger is occluded in every frame")]
    UnrecoverableOcclusion { finger: Finger },
    #[error("trigger list is empty")]
    NoTriggers,
    #[error("trigger for frame {frame_index} at t={timestamp} lies outside the motion-capture span")]
    OutOfRange { frame_index: u64, timestamp: f64 },
    #[error("malformed stream text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KinematicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Finger {
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; FINGER_COUNT] = [Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    M1,
    M2,
    P1,
    P2,
}

impl Marker {
    pub const ALL: [Marker; MARKERS_PER_FINGER] = [Marker::M1, Marker::M2, Marker::P1, Marker::P2];

    pub fn name(self) -> &'static str {
        match self {
            Marker::M1 => "M1",
            Marker::M2 => "M2",
            Marker::P1 => "P1",
            Marker::P2 => "P2",
        }
    }
}

/// A point or displacement in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Self) -> Self {
        Self::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// One motion-capture sample: 16 marker positions indexed by `[finger][marker]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrame {
    pub timestamp: f64,
    pub positions: [[Point3; MARKERS_PER_FINGER]; FINGER_COUNT],
    pub occluded: [[bool; MARKERS_PER_FINGER]; FINGER_COUNT],
}

impl MarkerFrame {
    pub fn new(timestamp: f64, positions: [[Point3; MARKERS_PER_FINGER]; FINGER_COUNT]) -> Self {
        Self {
            timestamp,
            positions,
            occluded: [[false; MARKERS_PER_FINGER]; FINGER_COUNT],
        }
    }

    pub fn position(&self, finger: Finger, marker: Marker) -> Point3 {
        self.positions[finger.index()][marker as usize]
    }

    pub fn finger_visible(&self, finger: Finger) -> bool {
        !self.occluded[finger.index()].iter().any(|&o| o)
    }
}

/// Flexion of the four long fingers, already clamped to `[0, 100]` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct McpAngles {
    pub flexion: [f64; FINGER_COUNT],
    /// Set when the raw measurement exceeded [`MAX_FLEXION_DEG`] and was clamped.
    pub saturated: [bool; FINGER_COUNT],
}

impl McpAngles {
    /// Clamp raw flexion values into the reported range, flagging saturation.
    pub fn from_flexion(raw: [f64; FINGER_COUNT]) -> Self {
        let mut flexion = [0.0; FINGER_COUNT];
        let mut saturated = [false; FINGER_COUNT];
        for i in 0..FINGER_COUNT {
            let v = raw[i];
            saturated[i] = v > MAX_FLEXION_DEG;
            flexion[i] = if v.is_nan() { 0.0 } else { v.clamp(0.0, MAX_FLEXION_DEG) };
        }
        Self { flexion, saturated }
    }

    pub fn get(&self, finger: Finger) -> f64 {
        self.flexion[finger.index()]
    }

    pub fn display_angle(&self, finger: Finger) -> f64 {
        EXTENSION_DISPLAY_DEG + self.get(finger)
    }
}

/// An MCP angle sample on the motion-capture clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSample {
    pub timestamp: f64,
    pub angles: McpAngles,
    /// False when any finger's value was bridged across an occlusion longer
    /// than [`MAX_INTERPOLATED_GAP`] frames.
    pub valid: bool,
}

/// An ultrasound frame trigger as seen on the master clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerEvent {
    pub timestamp: f64,
    pub frame_index: u64,
}

fn raw_flexion(m1: Point3, m2: Point3, p1: Point3, p2: Point3) -> Option<f64> {
    let metacarpal = m2 - m1;
    let phalanx = p2 - p1;
    if metacarpal.norm() == 0.0 || phalanx.norm() == 0.0 {
        return None;
    }
    // atan2 form of the dot-product angle; acos loses precision near 0 and 180.
    let between = metacarpal.cross(phalanx).norm().atan2(metacarpal.dot(phalanx)).to_degrees();
    Some((EXTENSION_DISPLAY_DEG - between).clamp(0.0, 180.0))
}

/// Flexion of one finger in degrees, in `[0, 180]` and not yet clamped to
/// the reported range.
pub fn mcp_angle(finger: Finger, m1: Point3, m2: Point3, p1: Point3, p2: Point3) -> Result<f64> {
    if ![m1, m2, p1, p2].iter().all(|p| p.is_finite()) {
        return Err(KinematicsError::NonFinite { finger, frame: 0 });
    }
    raw_flexion(m1, m2, p1, p2).ok_or(KinematicsError::DegenerateVector { finger })
}

fn frame_flexion(frame: &MarkerFrame, finger: Finger, frame_no: usize) -> Result<Option<f64>> {
    if !frame.finger_visible(finger) {
        return Ok(None);
    }
    let [m1, m2, p1, p2] = frame.positions[finger.index()];
    match mcp_angle(finger, m1, m2, p1, p2) {
        Err(KinematicsError::NonFinite { finger, .. }) => {
            Err(KinematicsError::NonFinite { finger, frame: frame_no })
        }
        other => other.map(Some),
    }
}

/// Fill `None` runs in place. Returns a per-sample validity mask.
fn bridge_gaps(times: &[f64], values: &mut [Option<f64>]) -> Vec<bool> {
    let n = values.len();
    let mut valid = vec![true; n];
    let mut i = 0;
    while i < n {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        let end = i;
        let left = start.checked_sub(1).map(|k| (times[k], values[k].unwrap()));
        let right = (end < n).then(|| (times[end], values[end].unwrap()));
        let ok = end - start <= MAX_INTERPOLATED_GAP;
        for k in start..end {
            let v = match (left, right) {
                (Some((t0, v0)), Some((t1, v1))) => v0 + (v1 - v0) * (times[k] - t0) / (t1 - t0),
                (Some((_, v0)), None) => v0,
                (None, Some((_, v1))) => v1,
                (None, None) => unreachable!("caller rejects fully occluded fingers"),
            };
            values[k] = Some(v);
            valid[k] = ok;
        }
    }
    valid
}

/// Convert a marker stream into per-frame MCP angles.
///
/// Frames where any of a finger's four markers is occluded are bridged by
/// linear interpolation in time (held constant at the stream edges).
pub fn angles_from_stream(frames: &[MarkerFrame]) -> Result<Vec<AngleSample>> {
    if frames.is_empty() {
        return Err(KinematicsError::EmptyStream);
    }
    for (k, pair) in frames.windows(2).enumerate() {
        if !(pair[1].timestamp > pair[0].timestamp) {
            return Err(KinematicsError::NonMonotonic { frame: k + 1 });
        }
    }
    let times: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
    let mut per_finger = Vec::with_capacity(FINGER_COUNT);
    let mut valid = vec![true; frames.len()];
    for finger in Finger::ALL {
        let mut values = frames
            .iter()
            .enumerate()
            .map(|(k, f)| frame_flexion(f, finger, k))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().all(Option::is_none) {
            return Err(KinematicsError::UnrecoverableOcclusion { finger });
        }
        let mask = bridge_gaps(&times, &mut values);
        for (v, m) in valid.iter_mut().zip(mask) {
            *v &= m;
        }
        per_finger.push(values);
    }
    Ok((0..frames.len())
        .map(|k| {
            let raw = [0, 1, 2, 3].map(|f| per_finger[f][k].unwrap());
            AngleSample {
                timestamp: times[k],
                angles: McpAngles::from_flexion(raw),
                valid: valid[k],
            }
        })
        .collect())
}

/// Index of the sample nearest to `t` (ties go to the earlier sample), or
/// `None` when `t` lies outside the span of `samples`.
fn nearest_sample(samples: &[AngleSample], t: f64) -> Option<usize> {
    let first = samples.first()?.timestamp;
    let last = samples.last()?.timestamp;
    if !(t >= first && t <= last) {
        return None;
    }
    let hi = samples.partition_point(|s| s.timestamp < t);
    if samples[hi].timestamp == t || hi == 0 {
        return Some(hi);
    }
    let lo = hi - 1;
    let d_lo = t - samples[lo].timestamp;
    let d_hi = samples[hi].timestamp - t;
    Some(if d_hi < d_lo { hi } else { lo })
}

/// Pick, for every trigger, the motion-capture sample nearest in time.
pub fn align_to_frames(triggers: &[TriggerEvent], mocap: &[AngleSample]) -> Result<Vec<McpAngles>> {
    if triggers.is_empty() {
        return Err(KinematicsError::NoTriggers);
    }
    for (k, pair) in triggers.windows(2).enumerate() {
        if !(pair[1].timestamp > pair[0].timestamp && pair[1].frame_index > pair[0].frame_index) {
            return Err(KinematicsError::NonMonotonic { frame: k + 1 });
        }
    }
    triggers
        .iter()
        .map(|tr| {
            nearest_sample(mocap, tr.timestamp)
                .map(|i| mocap[i].angles)
                .ok_or(KinematicsError::OutOfRange {
                    frame_index: tr.frame_index,
                    timestamp: tr.timestamp,
                })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Columnar text formats
// ---------------------------------------------------------------------------

/// Header line of the marker stream format. Columns: `timestamp`, then 48
/// coordinates ordered finger-major (index, middle, ring, pinky), marker
/// (M1, M2, P1, P2), axis (x, y, z), then 16 occlusion bits in the same
/// finger/marker order.
pub fn marker_header() -> String {
    let mut cols = vec!["timestamp".to_string()];
    for f in Finger::ALL {
        for m in Marker::ALL {
            for axis in ["x", "y", "z"] {
                cols.push(format!("{}_{}_{}", f.name(), m.name(), axis));
            }
        }
    }
    for f in Finger::ALL {
        for m in Marker::ALL {
            cols.push(format!("{}_{}_occluded", f.name(), m.name()));
        }
    }
    format!("# {}", cols.join("\t"))
}

pub fn write_marker_stream<W: Write>(mut out: W, frames: &[MarkerFrame]) -> Result<()> {
    writeln!(out, "{}", marker_header())?;
    let mut row = String::new();
    for frame in frames {
        row.clear();
        row.push_str(&frame.timestamp.to_string());
        for f in 0..FINGER_COUNT {
            for m in 0..MARKERS_PER_FINGER {
                let p = frame.positions[f][m];
                for v in [p.x, p.y, p.z] {
                    row.push('\t');
                    row.push_str(&v.to_string());
                }
            }
        }
        for f in 0..FINGER_COUNT {
            for m in 0..MARKERS_PER_FINGER {
                row.push('\t');
                row.push(if frame.occluded[f][m] { '1' } else { '0' });
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn parse_field<T: FromStr>(field: Option<&str>, line: usize, what: &str) -> Result<T> {
    let field = field.ok_or_else(|| KinematicsError::Parse {
        line,
        reason: format!("missing {what}"),
    })?;
    field.parse().map_err(|_| KinematicsError::Parse {
        line,
        reason: format!("bad {what} '{field}'"),
    })
}

fn parse_bit(field: Option<&str>, line: usize) -> Result<bool> {
    match field {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        other => Err(KinematicsError::Parse {
            line,
            reason: format!("bad flag {other:?}"),
        }),
    }
}

fn data_lines<R: BufRead>(input: R) -> impl Iterator<Item = Result<(usize, String)>> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(KinematicsError::from))
        .filter(|r| match r {
            Ok((_, l)) => !l.trim().is_empty() && !l.starts_with('#'),
            Err(_) => true,
        })
}

pub fn read_marker_stream<R: BufRead>(input: R) -> Result<Vec<MarkerFrame>> {
    let mut frames = Vec::new();
    for entry in data_lines(input) {
        let (line, text) = entry?;
        let mut fields = text.split('\t');
        let timestamp = parse_field(fields.next(), line, "timestamp")?;
        let mut positions = [[Point3::default(); MARKERS_PER_FINGER]; FINGER_COUNT];
        for finger in positions.iter_mut() {
            for p in finger.iter_mut() {
                p.x = parse_field(fields.next(), line, "coordinate")?;
                p.y = parse_field(fields.next(), line, "coordinate")?;
                p.z = parse_field(fields.next(), line, "coordinate")?;
            }
        }
        let mut occluded = [[false; MARKERS_PER_FINGER]; FINGER_COUNT];
        for finger in occluded.iter_mut() {
            for o in finger.iter_mut() {
                *o = parse_bit(fields.next(), line)?;
            }
        }
        if fields.next().is_some() {
            return Err(KinematicsError::Parse {
                line,
                reason: "trailing columns".into(),
            });
        }
        frames.push(MarkerFrame {
            timestamp,
            positions,
            occluded,
        });
    }
    Ok(frames)
}

/// Per-frame angle table: `frame_index`, four flexion values, four
/// saturation bits.
pub fn write_angle_table<W: Write>(mut out: W, angles: &[McpAngles]) -> Result<()> {
    writeln!(
        out,
        "# frame_index\tindex_flexion\tmiddle_flexion\tring_flexion\tpinky_flexion\tindex_saturated\tmiddle_saturated\tring_saturated\tpinky_saturated"
    )?;
    for (k, a) in angles.iter().enumerate() {
        let flex = a.flexion.map(|v| v.to_string()).join("\t");
        let sat = a.saturated.map(|s| if s { "1" } else { "0" }).join("\t");
        writeln!(out, "{k}\t{flex}\t{sat}")?;
    }
    Ok(())
}

pub fn read_angle_table<R: BufRead>(input: R) -> Result<Vec<McpAngles>> {
    let mut angles = Vec::new();
    for entry in data_lines(input) {
        let (line, text) = entry?;
        let mut fields = text.split('\t');
        let index: usize = parse_field(fields.next(), line, "frame_index")?;
        if index != angles.len() {
            return Err(KinematicsError::Parse {
                line,
                reason: format!("expected frame_index {}, found {index}", angles.len()),
            });
        }
        let mut a = McpAngles::default();
        for v in a.flexion.iter_mut() {
            *v = parse_field(fields.next(), line, "flexion")?;
        }
        for s in a.saturated.iter_mut() {
            *s = parse_bit(fields.next(), line)?;
        }
        angles.push(a);
    }
    Ok(angles)
}

/// Trigger table: `frame_index`, `timestamp`.
pub fn write_trigger_table<W: Write>(mut out: W, triggers: &[TriggerEvent]) -> Result<()> {
    writeln!(out, "# frame_index\ttimestamp")?;
    for t in triggers {
        writeln!(out, "{}\t{}", t.frame_index, t.timestamp)?;
    }
    Ok(())
}

pub fn read_trigger_table<R: BufRead>(input: R) -> Result<Vec<TriggerEvent>> {
    data_lines(input)
        .map(|entry| {
            let (line, text) = entry?;
            let mut fields = text.split('\t');
            Ok(TriggerEvent {
                frame_index: parse_field(fields.next(), line, "frame_index")?,
                timestamp: parse_field(fields.next(), line, "timestamp")?,
            })
        })
        .collect()
}
