use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::ptr;

use sonomyo::cnn::{frame_input, Architecture, CnnModel};
use sonomyo::pipeline::{save_bundle, ModelBundle};
use sonomyo::preprocess::{preprocess_frame, preprocess_values, PreprocessConfig};
use sonomyo::svc::{SvcModel, SvcTrainMeta};
use sonomyo::synthgen::{generate_session, Configuration, SessionSpec, Speed};
use sonomyo_ffi::*;

fn last_error() -> String {
    let p = sono_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(sono_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn mcp_angle_thirty_degrees() {
    let r = 30f64.to_radians();
    let (o, m, p) = ([0.0; 3], [1.0, 0.0, 0.0], [-r.cos(), 0.0, r.sin()]);
    let mut out = 0.0;
    let s = unsafe { sono_mcp_angle(0, o.as_ptr(), m.as_ptr(), o.as_ptr(), p.as_ptr(), &mut out) };
    assert_eq!(s, SonoStatus::Ok);
    assert!((out - 30.0).abs() < 1e-9);

    let s = unsafe { sono_mcp_angle(4, o.as_ptr(), m.as_ptr(), o.as_ptr(), p.as_ptr(), &mut out) };
    assert_eq!(s, SonoStatus::InvalidArgument);
    let s = unsafe { sono_mcp_angle(1, o.as_ptr(), o.as_ptr(), o.as_ptr(), p.as_ptr(), &mut out) };
    assert_eq!(s, SonoStatus::Data);
    assert!(last_error().contains("Middle") || last_error().to_lowercase().contains("middle"));
    let s = unsafe { sono_mcp_angle(0, ptr::null(), m.as_ptr(), o.as_ptr(), p.as_ptr(), &mut out) };
    assert_eq!(s, SonoStatus::NullPointer);
}

#[test]
fn metrics_match_hand_values() {
    let (t, p) = ([0.0, 0.0, 0.0, 0.0], [5.0, 5.0, 0.0, 0.0]);
    let mut out = 0.0;
    assert_eq!(unsafe { sono_rmse(t.as_ptr(), p.as_ptr(), 4, &mut out) }, SonoStatus::Ok);
    assert!((out - 12.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { sono_rmse(t.as_ptr(), p.as_ptr(), 0, &mut out) }, SonoStatus::InvalidArgument);

    let (t, p) = ([1u32, 2, 3, 4], [1u32, 2, 3, 5]);
    assert_eq!(unsafe { sono_accuracy(t.as_ptr(), p.as_ptr(), 4, &mut out) }, SonoStatus::Ok);
    assert_eq!(out, 75.0);
}

#[test]
fn preprocess_matches_core() {
    let spec = SessionSpec::new(Configuration::C3, Speed::Slow, 5)
        .with_dims(32, 16)
        .with_timing(1.0, 25.0);
    let frame = generate_session(&spec).unwrap().frames.remove(0);
    let cfg = PreprocessConfig::new(8, 4);
    let expect = preprocess_values(&frame, &cfg).unwrap();
    let mut out = vec![0.0; 32];
    let s = unsafe { sono_preprocess(frame.pixels.as_ptr(), 32, 16, 8, 4, cfg.log_dynamic_range, out.as_mut_ptr()) };
    assert_eq!(s, SonoStatus::Ok);
    assert_eq!(out, expect);
    let s = unsafe { sono_preprocess(frame.pixels.as_ptr(), 32, 16, 7, 4, 1000.0, out.as_mut_ptr()) };
    assert_eq!(s, SonoStatus::InvalidArgument);
}

fn toy_svc() -> SvcModel {
    SvcModel {
        classes: vec![Configuration::C1, Configuration::C2],
        weights: vec![vec![-1.0, -1.0, 1.0, 1.0], vec![1.0, 1.0, -1.0, -1.0]],
        biases: vec![0.0, 0.0],
        feature_dim: 4,
        lambda: 1e-4,
        train_meta: SvcTrainMeta {
            seed: 0,
            epochs: 1,
            test_split: 0.3,
        },
    }
}

#[test]
fn model_handles_agree_with_core() {
    let dir = tempfile::tempdir().unwrap();
    let svc_path = dir.path().join("svc.bin");
    toy_svc().save(&svc_path).unwrap();
    let cnn = CnnModel::new(Architecture::micro(4, 4), 11).unwrap();
    let cnn_path = dir.path().join("cnn.bin");
    cnn.save(&cnn_path).unwrap();

    unsafe {
        let mut svc = ptr::null_mut();
        assert_eq!(sono_svc_load(cpath(&svc_path).as_ptr(), &mut svc), SonoStatus::Ok);
        assert_eq!(sono_svc_feature_len(svc), 4);
        let mut code = 0;
        let top = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(sono_svc_predict(svc, top.as_ptr(), 4, &mut code), SonoStatus::Ok);
        assert_eq!(code, 2);
        assert_eq!(sono_svc_predict(svc, top.as_ptr(), 3, &mut code), SonoStatus::InvalidArgument);
        sono_svc_free(svc);

        let mut h = ptr::null_mut();
        assert_eq!(sono_cnn_load(cpath(&cnn_path).as_ptr(), &mut h), SonoStatus::Ok);
        assert_eq!(sono_cnn_input_len(h), 16);
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let (mut flex, mut sat) = ([0.0; 4], [9u8; 4]);
        assert_eq!(sono_cnn_predict(h, x.as_ptr(), 16, flex.as_mut_ptr(), sat.as_mut_ptr()), SonoStatus::Ok);
        let raw = cnn.predict(&x).unwrap();
        for f in 0..4 {
            assert_eq!(flex[f], raw[f].clamp(0.0, 100.0));
            assert_eq!(sat[f], u8::from(raw[f] > 100.0));
        }
        sono_cnn_free(h);

        sono_svc_free(ptr::null_mut());
        sono_cnn_free(ptr::null_mut());
        sono_bundle_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cpath(&dir.path().join("nope.bin"));
    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a model").unwrap();
    unsafe {
        let mut svc = ptr::null_mut();
        assert_eq!(sono_svc_load(missing.as_ptr(), &mut svc), SonoStatus::Io);
        assert!(svc.is_null());
        assert_eq!(sono_svc_load(cpath(&garbage).as_ptr(), &mut svc), SonoStatus::Format);
        assert!(!last_error().is_empty());
        let mut cnn = ptr::null_mut();
        assert_eq!(sono_cnn_load(cpath(&garbage).as_ptr(), &mut cnn), SonoStatus::Format);
        let mut b = ptr::null_mut();
        assert_eq!(sono_bundle_load(missing.as_ptr(), &mut b), SonoStatus::Io);
        assert_eq!(sono_svc_load(ptr::null(), &mut svc), SonoStatus::NullPointer);
    }
}

#[test]
fn bundle_processes_frames() {
    let constant = |v: f64| {
        let mut m = CnnModel::new(Architecture::micro(4, 4), 0).unwrap();
        let last = m.layers().len() - 1;
        m.update_params(|i, w, b| {
            if i == last {
                w.fill(0.0);
                b.fill(v);
            }
        });
        m
    };
    let cnns = BTreeMap::from([(Configuration::C1, constant(10.0)), (Configuration::C2, constant(120.0))]);
    let bundle = ModelBundle::new(toy_svc(), PreprocessConfig::new(2, 2), PreprocessConfig::new(4, 4), cnns).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();

    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(sono_bundle_load(cpath(dir.path()).as_ptr(), &mut h), SonoStatus::Ok);
        for (bright_top, code, angle, saturated) in [(true, 2, 100.0, 1), (false, 1, 10.0, 0)] {
            let pixels: Vec<f32> = (0..16).map(|i| if (i < 8) == bright_top { 1.0 } else { 0.0 }).collect();
            let mut r = SonoFrameResult::default();
            assert_eq!(sono_bundle_process_frame(h, pixels.as_ptr(), 4, 4, 7, &mut r), SonoStatus::Ok);
            assert_eq!(r.configuration, code);
            assert_eq!(r.flexion, [angle; 4]);
            assert_eq!(r.saturated, [saturated; 4]);
            assert!(r.total_seconds >= r.svc_seconds + r.cnn_seconds);
        }
        let pixels = [0f32; 12];
        let mut r = SonoFrameResult::default();
        assert_ne!(sono_bundle_process_frame(h, pixels.as_ptr(), 4, 3, 0, &mut r), SonoStatus::Ok);
        sono_bundle_free(h);
    }

    // The frame the CNN sees equals the core preprocessing.
    let frame = sonomyo::synthgen::UltrasoundFrame::new(4, 4, 0, (0..16).map(|i| i as f32).collect());
    let pre = preprocess_frame(&frame, &PreprocessConfig::new(4, 4)).unwrap();
    assert_eq!(frame_input(&pre).len(), 16);
}
