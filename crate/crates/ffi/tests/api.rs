use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use precswitch_ffi::*;

const SMALL: &str = r#"{
    "system": { "A": [[0.5]], "B": [[0.5]], "C": [[1.0]], "K": [[-0.4]], "h": 0.1 },
    "scenario": {
        "steps": [{ "time": 0.0, "reference": 1.0 }],
        "band": { "percent": 20.0 },
        "settling_time": 0.5,
        "horizon": 3.0,
        "runtime_lo": 1.0,
        "runtime_hi": 2.0,
        "metrics": { "rise": 0.2, "peak": 0.3, "settling": 0.5 }
    },
    "precision": { "error_lo": 1e-3, "error_hi": 1e-6 }
}"#;

fn cc_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/benchmarks/cc.json")
}

fn last_error() -> String {
    let p = precswitch_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn config(json: &str) -> *mut PrecswitchConfig {
    let json = CString::new(json).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_config_from_json(json.as_ptr(), &mut cfg) },
        PrecswitchStatus::Ok
    );
    cfg
}

fn levels(s: *const PrecswitchSchedule) -> Vec<u8> {
    let mut count = 0;
    assert_eq!(
        unsafe { precswitch_schedule_levels(s, ptr::null_mut(), 0, &mut count) },
        PrecswitchStatus::BufferTooSmall
    );
    let mut v = vec![0u8; count];
    assert_eq!(
        unsafe { precswitch_schedule_levels(s, v.as_mut_ptr(), v.len(), &mut count) },
        PrecswitchStatus::Ok
    );
    v
}

#[test]
fn windows_of_the_cc_benchmark() {
    let path = CString::new(cc_path().to_str().unwrap()).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_config_from_path(path.as_ptr(), &mut cfg) },
        PrecswitchStatus::Ok
    );
    let mut count = 0;
    let (mut starts, mut ends) = ([0usize; 4], [0usize; 4]);
    let st =
        unsafe { precswitch_windows(cfg, starts.as_mut_ptr(), ends.as_mut_ptr(), 4, &mut count) };
    assert_eq!((st, count), (PrecswitchStatus::BufferTooSmall, 8));
    assert!(last_error().contains("capacity 4"));

    let (mut starts, mut ends) = ([0usize; 8], [0usize; 8]);
    let st =
        unsafe { precswitch_windows(cfg, starts.as_mut_ptr(), ends.as_mut_ptr(), 8, &mut count) };
    assert_eq!(st, PrecswitchStatus::Ok);
    assert_eq!(starts, [64, 180, 244, 350, 414, 550, 614, 790]);
    assert_eq!(ends, [120, 210, 300, 380, 470, 580, 670, 791]);
    assert!(precswitch_last_error().is_null());
    unsafe { precswitch_config_free(cfg) };
}

#[test]
fn synthesize_verify_and_round_trip() {
    let cfg = config(SMALL);
    let mut sched = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_synthesize(cfg, &mut sched) },
        PrecswitchStatus::Ok
    );
    let solve = unsafe { precswitch_schedule_solve_status(sched) };
    assert!(matches!(
        solve,
        PrecswitchSolveStatus::Optimal | PrecswitchSolveStatus::GapLimit
    ));
    let v = levels(sched);
    assert_eq!(v.len(), 31);
    assert_eq!(v[0], 1);
    assert!(unsafe { precswitch_schedule_objective(sched) }.is_finite());

    let mut report = std::mem::MaybeUninit::<PrecswitchReport>::uninit();
    assert_eq!(
        unsafe { precswitch_verify(cfg, sched, report.as_mut_ptr()) },
        PrecswitchStatus::Ok
    );
    let report = unsafe { report.assume_init() };
    assert!(report.model_passed);
    assert_eq!(report.model_violation_sample, -1);
    assert_eq!(report.emulation, PrecswitchEmulation::Passed);
    assert_eq!(report.switches, unsafe {
        precswitch_schedule_switch_count(sched)
    });
    let lo = v.iter().filter(|&&b| b == 0).count() as f64;
    assert!((report.lo_fraction - lo / 30.0).abs() < 1e-12);

    let text = unsafe { precswitch_schedule_to_text(sched) };
    let mut parsed = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_schedule_parse(text, &mut parsed) },
        PrecswitchStatus::Ok
    );
    assert_eq!(levels(parsed), v);
    assert_eq!(unsafe { precswitch_schedule_objective(parsed) }, unsafe {
        precswitch_schedule_objective(sched)
    });
    unsafe {
        precswitch_string_free(text);
        precswitch_schedule_free(parsed);
        precswitch_schedule_free(sched);
        precswitch_config_free(cfg);
    }
}

#[test]
fn failures_set_codes_and_messages() {
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_config_from_json(ptr::null(), &mut cfg) },
        PrecswitchStatus::NullArgument
    );
    assert_eq!(last_error(), "json is NULL");

    let bad = CString::new(SMALL.replace("\"h\": 0.1", "\"h\": -1")).unwrap();
    assert_eq!(
        unsafe { precswitch_config_from_json(bad.as_ptr(), &mut cfg) },
        PrecswitchStatus::Config
    );
    assert!(cfg.is_null());
    assert!(last_error().starts_with("system.h:"), "{}", last_error());

    let missing = CString::new("/nonexistent/cfg.json").unwrap();
    assert_eq!(
        unsafe { precswitch_config_from_path(missing.as_ptr(), &mut cfg) },
        PrecswitchStatus::Io
    );

    let invalid = [0xffu8, 0];
    let mut sched = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_schedule_parse(invalid.as_ptr().cast(), &mut sched) },
        PrecswitchStatus::InvalidUtf8
    );
    let garbage = CString::new("not a schedule").unwrap();
    assert_eq!(
        unsafe { precswitch_schedule_parse(garbage.as_ptr(), &mut sched) },
        PrecswitchStatus::Format
    );
    assert!(sched.is_null());

    // A band narrower than the lo and hi error bounds allows nothing.
    let tight = SMALL
        .replace(r#"{ "percent": 20.0 }"#, r#"{ "absolute": 0.01 }"#)
        .replace(
            r#""error_lo": 1e-3, "error_hi": 1e-6"#,
            r#""error_lo": 0.1, "error_hi": 0.05"#,
        );
    let cfg = config(&tight);
    assert_eq!(
        unsafe { precswitch_synthesize(cfg, &mut sched) },
        PrecswitchStatus::Infeasible
    );
    assert!(last_error().contains("no feasible schedule"));
    assert!(sched.is_null());
    unsafe { precswitch_config_free(cfg) };

    assert_eq!(
        unsafe { precswitch_schedule_solve_status(ptr::null()) },
        PrecswitchSolveStatus::Unknown
    );
    assert!(unsafe { precswitch_schedule_objective(ptr::null()) }.is_nan());
    assert!(unsafe { precswitch_schedule_to_text(ptr::null()) }.is_null());
    unsafe {
        precswitch_config_free(ptr::null_mut());
        precswitch_schedule_free(ptr::null_mut());
        precswitch_string_free(ptr::null_mut());
    }
}

#[test]
fn parsed_schedule_without_summary_has_unknown_status() {
    let text =
        CString::new("precswitch-schedule 1\nN 4\nsegment 0 1 hi\nsegment 2 4 lo\n").unwrap();
    let mut sched = ptr::null_mut();
    assert_eq!(
        unsafe { precswitch_schedule_parse(text.as_ptr(), &mut sched) },
        PrecswitchStatus::Ok
    );
    assert_eq!(
        unsafe { precswitch_schedule_solve_status(sched) },
        PrecswitchSolveStatus::Unknown
    );
    assert_eq!(levels(sched), [1, 1, 0, 0, 0]);
    assert_eq!(unsafe { precswitch_schedule_switch_count(sched) }, 1);
    unsafe { precswitch_schedule_free(sched) };
}

/// Directory holding the static library built next to this test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let dir = tempfile::TempDir::new().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libprecswitch_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .expect("cc runs");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = Command::new(&exe).arg(cc_path()).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0], "[64, 120]");
    assert_eq!(lines[7], "[790, 791]");
    assert!(
        lines[8].starts_with("error: malformed JSON"),
        "{}",
        lines[8]
    );
}
