//! On-disk session layout.
//!
//! ```text
//! <dir>/session.txt   key=value metadata (see SessionMeta)
//! <dir>/frames.f32    frame_count * height * width little-endian f32,
//!                     frame-major, then row-major within a frame
//! <dir>/angles.tsv    per-frame angle table
//! <dir>/triggers.tsv  frame_index, timestamp
//! <dir>/mocap.tsv     marker stream
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HandConfiguration, Result, Session, SessionSpec, SynthError, UltrasoundFrame, MOCAP_RATE_HZ};
use crate::{kinematics, kv};

pub const SESSION_FORMAT: &str = "sonomyo-session";
pub const SESSION_VERSION: u32 = 1;

pub const META_FILE: &str = "session.txt";
pub const FRAMES_FILE: &str = "frames.f32";
pub const ANGLES_FILE: &str = "angles.tsv";
pub const TRIGGERS_FILE: &str = "triggers.tsv";
pub const MOCAP_FILE: &str = "mocap.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub spec: SessionSpec,
    pub frame_count: usize,
    pub mocap_count: usize,
}

fn format_err(path: &Path, reason: impl Into<String>) -> SynthError {
    SynthError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn meta_text(session: &Session) -> String {
    let s = &session.spec;
    let amps = s.configuration.involvement.map(|a| a.to_string()).join(",");
    let lines = [
        ("format", SESSION_FORMAT.to_string()),
        ("version", SESSION_VERSION.to_string()),
        ("configuration", s.configuration.id.to_string()),
        ("amplitudes", amps),
        ("mcp_frozen", s.configuration.mcp_frozen.to_string()),
        ("speed", s.speed.to_string()),
        ("seed", s.seed.to_string()),
        ("duration", s.duration.to_string()),
        ("frame_rate", s.frame_rate.to_string()),
        ("image_height", s.image_height.to_string()),
        ("image_width", s.image_width.to_string()),
        ("noise_level", s.noise_level.to_string()),
        ("frame_count", session.frames.len().to_string()),
        ("mocap_rate", MOCAP_RATE_HZ.to_string()),
        ("mocap_count", session.mocap.len().to_string()),
        ("pixel_format", "f32le".to_string()),
    ];
    lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn write_session(dir: &Path, session: &Session) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(META_FILE), meta_text(session))?;

    let mut blob = BufWriter::new(File::create(dir.join(FRAMES_FILE))?);
    for frame in &session.frames {
        for p in &frame.pixels {
            blob.write_all(&p.to_le_bytes())?;
        }
    }
    blob.flush()?;

    let angles = BufWriter::new(File::create(dir.join(ANGLES_FILE))?);
    kinematics::write_angle_table(angles, &session.angles)?;
    let triggers = BufWriter::new(File::create(dir.join(TRIGGERS_FILE))?);
    kinematics::write_trigger_table(triggers, &session.triggers)?;
    let mocap = BufWriter::new(File::create(dir.join(MOCAP_FILE))?);
    kinematics::write_marker_stream(mocap, &session.mocap)?;
    Ok(())
}

fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    kv::parse(text).map_err(|reason| format_err(path, reason))
}

fn field<T: std::str::FromStr>(path: &Path, map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map.get(key).ok_or_else(|| format_err(path, format!("missing key '{key}'")))?;
    raw.parse()
        .map_err(|_| format_err(path, format!("bad value '{raw}' for '{key}'")))
}

pub fn read_session_meta(dir: &Path) -> Result<SessionMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)?;
    let map = parse_key_values(&path, &text)?;
    let format: String = field(&path, &map, "format")?;
    if format != SESSION_FORMAT {
        return Err(format_err(&path, format!("not a session file (format '{format}')")));
    }
    let version: u32 = field(&path, &map, "version")?;
    if version != SESSION_VERSION {
        return Err(format_err(&path, format!("unsupported version {version}")));
    }
    let amps: String = field(&path, &map, "amplitudes")?;
    let amps: Vec<f64> = amps
        .split(',')
        .map(|a| a.parse().map_err(|_| format_err(&path, format!("bad amplitude '{a}'"))))
        .collect::<Result<_>>()?;
    let involvement: [f64; 4] = amps
        .try_into()
        .map_err(|_| format_err(&path, "expected four amplitudes"))?;
    let configuration = HandConfiguration {
        id: field::<String>(&path, &map, "configuration")?.parse()?,
        involvement,
        mcp_frozen: field(&path, &map, "mcp_frozen")?,
    };
    let spec = SessionSpec {
        configuration,
        speed: field::<String>(&path, &map, "speed")?.parse()?,
        duration: field(&path, &map, "duration")?,
        frame_rate: field(&path, &map, "frame_rate")?,
        image_height: field(&path, &map, "image_height")?,
        image_width: field(&path, &map, "image_width")?,
        seed: field(&path, &map, "seed")?,
        noise_level: field(&path, &map, "noise_level")?,
    };
    Ok(SessionMeta {
        spec,
        frame_count: field(&path, &map, "frame_count")?,
        mocap_count: field(&path, &map, "mocap_count")?,
    })
}

/// Load only the frame stack of a session directory.
pub fn read_frames(dir: &Path, meta: &SessionMeta) -> Result<Vec<UltrasoundFrame>> {
    let path = dir.join(FRAMES_FILE);
    let (h, w) = (meta.spec.image_height, meta.spec.image_width);
    let expected = meta.frame_count * h * w * 4;
    let mut bytes = Vec::with_capacity(expected);
    BufReader::new(File::open(&path)?).read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(format_err(
            &path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(h * w * 4)
        .enumerate()
        .map(|(k, chunk)| {
            let pixels = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            UltrasoundFrame::new(h, w, k as u64, pixels)
        })
        .collect())
}

pub fn read_session(dir: &Path) -> Result<Session> {
    let meta = read_session_meta(dir)?;
    let frames = read_frames(dir, &meta)?;
    let angles = kinematics::read_angle_table(BufReader::new(File::open(dir.join(ANGLES_FILE))?))?;
    let triggers = kinematics::read_trigger_table(BufReader::new(File::open(dir.join(TRIGGERS_FILE))?))?;
    let mocap = kinematics::read_marker_stream(BufReader::new(File::open(dir.join(MOCAP_FILE))?))?;
    if angles.len() != meta.frame_count || triggers.len() != meta.frame_count {
        return Err(format_err(
            dir,
            format!(
                "frame_count {} but {} angle rows and {} triggers",
                meta.frame_count,
                angles.len(),
                triggers.len()
            ),
        ));
    }
    if mocap.len() != meta.mocap_count {
        return Err(format_err(dir, format!("mocap_count {} but {} rows", meta.mocap_count, mocap.len())));
    }
    Ok(Session {
        spec: meta.spec,
        frames,
        angles,
        triggers,
        mocap,
    })
}
