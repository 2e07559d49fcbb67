//! C ABI over the sonomyo prediction path.
//!
//! Every fallible function returns a [`SonoStatus`]; on failure the message is
//! available from [`sono_last_error`] on the same thread. Models are opaque
//! handles created by `*_load` and released with the matching `*_free`.
//! Configurations are coded 1..=11 for C1..C11 and 0 for the open hand.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use sonomyo::cnn::{CnnError, CnnModel, OUTPUTS};
use sonomyo::kinematics::{self, Finger, McpAngles, Point3};
use sonomyo::metrics::{self, MetricsError};
use sonomyo::pipeline::{self, BundleError, ModelBundle, NoObserver};
use sonomyo::preprocess::{preprocess_values, PreprocessConfig};
use sonomyo::svc::{SvcError, SvcModel};
use sonomyo::synthgen::{Configuration, UltrasoundFrame};

/// Number of fingers in every angle array.
pub const SONO_FINGERS: usize = 4;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SonoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Panic = 6,
}

/// Trained configuration classifier.
pub struct SonoSvc(SvcModel);

/// Trained angle regressor.
pub struct SonoCnn(CnnModel);

/// Classifier plus one regressor per configuration.
pub struct SonoBundle(ModelBundle);

/// Output of one combined-pipeline frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SonoFrameResult {
    pub configuration: u32,
    /// MCP flexion in degrees, clamped to [0, 100].
    pub flexion: [f64; SONO_FINGERS],
    /// 1 where the raw prediction exceeded 100 degrees.
    pub saturated: [u8; SONO_FINGERS],
    pub svc_seconds: f64,
    pub cnn_seconds: f64,
    pub total_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SonoStatus, String);

type FfiResult = Result<(), Failure>;

fn fail<T>(status: SonoStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> SonoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SonoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            SonoStatus::Panic
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure(SonoStatus::InvalidArgument, e.to_string())
    }
}

impl From<SvcError> for Failure {
    fn from(e: SvcError) -> Self {
        let status = match e {
            SvcError::Io(_) => SonoStatus::Io,
            SvcError::Format(_) => SonoStatus::Format,
            SvcError::Shape { .. } => SonoStatus::InvalidArgument,
            _ => SonoStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<CnnError> for Failure {
    fn from(e: CnnError) -> Self {
        let status = match e {
            CnnError::Io(_) => SonoStatus::Io,
            CnnError::Format(_) | CnnError::ArchitectureMismatch { .. } | CnnError::Architecture(_) => {
                SonoStatus::Format
            }
            CnnError::Shape { .. } => SonoStatus::InvalidArgument,
            _ => SonoStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        let status = match e {
            BundleError::MissingFile(_) | BundleError::Io(_) => SonoStatus::Io,
            BundleError::Preprocess(_) => SonoStatus::InvalidArgument,
            _ => SonoStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(SonoStatus::NullPointer, format!("{name} is NULL"));
    }
    Ok(())
}

/// # Safety
/// `p` must be non-null (checked) and point to `n` readable elements.
unsafe fn input<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    nonnull(p, "path")?;
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(SonoStatus::InvalidArgument, "path is not UTF-8"),
    }
}

unsafe fn point_arg(p: *const f64, name: &str) -> Result<Point3, Failure> {
    let v = input(p, 3, name)?;
    Ok(Point3::new(v[0], v[1], v[2]))
}

fn configuration_code(c: Configuration) -> u32 {
    Configuration::CLASSES
        .iter()
        .position(|&k| k == c)
        .map_or(0, |i| i as u32 + 1)
}

fn write_angles(a: &McpAngles, flexion: &mut [f64; SONO_FINGERS], saturated: &mut [u8; SONO_FINGERS]) {
    *flexion = a.flexion;
    for (s, &f) in saturated.iter_mut().zip(&a.saturated) {
        *s = u8::from(f);
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sono_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sono_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// MCP flexion of `finger` (0 index .. 3 pinky) from two metacarpal and two
/// proximal-phalanx markers, each three doubles.
///
/// # Safety
/// Marker pointers must reference three doubles; `out` one double.
#[no_mangle]
pub unsafe extern "C" fn sono_mcp_angle(
    finger: u32,
    m1: *const f64,
    m2: *const f64,
    p1: *const f64,
    p2: *const f64,
    out: *mut f64,
) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        let Some(&finger) = Finger::ALL.get(finger as usize) else {
            return fail(SonoStatus::InvalidArgument, format!("finger {finger} out of range 0..=3"));
        };
        let (m1, m2, p1, p2) = (point_arg(m1, "m1")?, point_arg(m2, "m2")?, point_arg(p1, "p1")?, point_arg(p2, "p2")?);
        match kinematics::mcp_angle(finger, m1, m2, p1, p2) {
            Ok(v) => {
                *out = v;
                Ok(())
            }
            Err(e) => fail(SonoStatus::Data, e.to_string()),
        }
    })
}

/// Root-mean-square error of two length-`n` arrays.
///
/// # Safety
/// `truth` and `predicted` must reference `n` doubles; `out` one double.
#[no_mangle]
pub unsafe extern "C" fn sono_rmse(truth: *const f64, predicted: *const f64, n: usize, out: *mut f64) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = metrics::rmse(input(truth, n, "truth")?, input(predicted, n, "predicted")?)?;
        Ok(())
    })
}

/// Percentage of equal labels in two length-`n` arrays.
///
/// # Safety
/// `truth` and `predicted` must reference `n` values; `out` one double.
#[no_mangle]
pub unsafe extern "C" fn sono_accuracy(truth: *const u32, predicted: *const u32, n: usize, out: *mut f64) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = metrics::accuracy(input(truth, n, "truth")?, input(predicted, n, "predicted")?)?;
        Ok(())
    })
}

/// Log-compress, normalise and block-average a `height` x `width` frame to
/// `target_height` x `target_width` values written to `out`.
///
/// # Safety
/// `pixels` must reference `height * width` floats and `out`
/// `target_height * target_width` doubles.
#[no_mangle]
pub unsafe extern "C" fn sono_preprocess(
    pixels: *const f32,
    height: usize,
    width: usize,
    target_height: usize,
    target_width: usize,
    log_dynamic_range: f64,
    out: *mut f64,
) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        let Some(n) = height.checked_mul(width) else {
            return fail(SonoStatus::InvalidArgument, "frame dimensions overflow");
        };
        let frame = UltrasoundFrame::new(height, width, 0, input(pixels, n, "pixels")?.to_vec());
        let mut cfg = PreprocessConfig::new(target_height, target_width);
        cfg.log_dynamic_range = log_dynamic_range;
        let values = preprocess_values(&frame, &cfg).map_err(|e| Failure(SonoStatus::InvalidArgument, e.to_string()))?;
        slice::from_raw_parts_mut(out, values.len()).copy_from_slice(&values);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sono_svc_load(path: *const c_char, out: *mut *mut SonoSvc) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let model = SvcModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SonoSvc(model)));
        Ok(())
    })
}

/// Feature length the classifier expects, 0 for NULL.
///
/// # Safety
/// `svc` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sono_svc_feature_len(svc: *const SonoSvc) -> usize {
    svc.as_ref().map_or(0, |s| s.0.weights.first().map_or(0, Vec::len))
}

/// Classify one feature vector; writes the configuration code.
///
/// # Safety
/// `svc` must be a live handle, `features` reference `n` doubles and
/// `configuration` be writable.
#[no_mangle]
pub unsafe extern "C" fn sono_svc_predict(
    svc: *const SonoSvc,
    features: *const f64,
    n: usize,
    configuration: *mut u32,
) -> SonoStatus {
    guard(|| {
        nonnull(svc, "svc")?;
        nonnull(configuration, "configuration")?;
        let (c, _) = (*svc).0.predict(input(features, n, "features")?)?;
        *configuration = configuration_code(c);
        Ok(())
    })
}

/// # Safety
/// `svc` must be NULL or a handle from [`sono_svc_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sono_svc_free(svc: *mut SonoSvc) {
    if !svc.is_null() {
        drop(Box::from_raw(svc));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sono_cnn_load(path: *const c_char, out: *mut *mut SonoCnn) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let model = CnnModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SonoCnn(model)));
        Ok(())
    })
}

/// Input length the regressor expects, 0 for NULL.
///
/// # Safety
/// `cnn` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sono_cnn_input_len(cnn: *const SonoCnn) -> usize {
    cnn.as_ref().map_or(0, |c| c.0.input_shape().len())
}

/// Predict clamped MCP flexion for one preprocessed input.
///
/// # Safety
/// `cnn` must be a live handle, `input_values` reference `n` doubles,
/// `flexion` four doubles and `saturated` NULL or four bytes.
#[no_mangle]
pub unsafe extern "C" fn sono_cnn_predict(
    cnn: *const SonoCnn,
    input_values: *const f64,
    n: usize,
    flexion: *mut f64,
    saturated: *mut u8,
) -> SonoStatus {
    guard(|| {
        nonnull(cnn, "cnn")?;
        nonnull(flexion, "flexion")?;
        let raw: [f64; OUTPUTS] = (*cnn).0.predict(input(input_values, n, "input")?)?;
        let angles = McpAngles::from_flexion(raw);
        let mut sat = [0u8; SONO_FINGERS];
        write_angles(&angles, &mut *flexion.cast::<[f64; SONO_FINGERS]>(), &mut sat);
        if !saturated.is_null() {
            *saturated.cast::<[u8; SONO_FINGERS]>() = sat;
        }
        Ok(())
    })
}

/// # Safety
/// `cnn` must be NULL or a handle from [`sono_cnn_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sono_cnn_free(cnn: *mut SonoCnn) {
    if !cnn.is_null() {
        drop(Box::from_raw(cnn));
    }
}

/// Load a bundle directory written by the `sonomyo` tool.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sono_bundle_load(dir: *const c_char, out: *mut *mut SonoBundle) -> SonoStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = std::ptr::null_mut();
        let bundle = pipeline::load_bundle(&path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(SonoBundle(bundle)));
        Ok(())
    })
}

/// Classify a raw frame and regress its angles with the selected model.
///
/// # Safety
/// `bundle` must be a live handle, `pixels` reference `height * width`
/// floats and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn sono_bundle_process_frame(
    bundle: *const SonoBundle,
    pixels: *const f32,
    height: usize,
    width: usize,
    frame_index: u64,
    out: *mut SonoFrameResult,
) -> SonoStatus {
    guard(|| {
        nonnull(bundle, "bundle")?;
        nonnull(out, "out")?;
        let Some(n) = height.checked_mul(width) else {
            return fail(SonoStatus::InvalidArgument, "frame dimensions overflow");
        };
        let frame = UltrasoundFrame::new(height, width, frame_index, input(pixels, n, "pixels")?.to_vec());
        let (c, angles, t) = pipeline::process_frame(&(*bundle).0, &frame, &mut NoObserver)?;
        let mut r = SonoFrameResult {
            configuration: configuration_code(c),
            svc_seconds: t.svc_seconds,
            cnn_seconds: t.cnn_seconds,
            total_seconds: t.total_seconds,
            ..Default::default()
        };
        write_angles(&angles, &mut r.flexion, &mut r.saturated);
        *out = r;
        Ok(())
    })
}

/// # Safety
/// `bundle` must be NULL or a handle from [`sono_bundle_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sono_bundle_free(bundle: *mut SonoBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}
