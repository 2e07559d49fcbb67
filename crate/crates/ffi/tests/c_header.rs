//! Compile and run a C program against the generated header and static library.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    // Test builds only produce the rlib, so build the static library here.
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "sonomyo-ffi", "--lib", "--target-dir"])
        .arg(profile_dir.parent().unwrap())
        .status()
        .expect("run cargo");
    assert!(status.success());
    let lib = profile_dir.join("libsonomyo_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let work = tempfile::tempdir().unwrap();
    let exe = work.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("sonomyo {}", env!("CARGO_PKG_VERSION")));
}
