use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use precswitch::io::ScheduleFile;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_precswitch"))
}

fn cc_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("benchmarks/cc.json")
}

fn cc_value() -> Value {
    serde_json::from_str(&std::fs::read_to_string(cc_path()).unwrap()).unwrap()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// First-order plant with a step to 1 and a loose band.
fn small(horizon: f64) -> Value {
    json!({
        "system": { "A": [[0.5]], "B": [[0.5]], "C": [[1.0]], "K": [[-0.4]], "h": 0.1 },
        "scenario": {
            "steps": [{ "time": 0.0, "reference": 1.0 }],
            "band": { "percent": 20.0 },
            "settling_time": 0.5,
            "horizon": horizon,
            "runtime_lo": 1.0,
            "runtime_hi": 2.0,
            "metrics": { "rise": 0.2, "peak": 0.3, "settling": 0.5 }
        },
        "precision": { "error_lo": 1e-3, "error_hi": 1e-6 }
    })
}

#[test]
fn intervals_lists_the_cc_windows() {
    let o = run(&["intervals", s(&cc_path())]);
    assert!(o.status.success());
    let text = stdout(&o);
    for w in [
        "[64, 120]",
        "[180, 210]",
        "[244, 300]",
        "[350, 380]",
        "[414, 470]",
        "[550, 580]",
        "[614, 670]",
        "[790, 791]",
    ] {
        assert!(text.contains(w), "{w} missing from\n{text}");
    }
    assert!(text.ends_with("mu 8\n"));

    let o = run(&["--json", "intervals", s(&cc_path())]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mu"], 8);
    assert_eq!(v["windows"][7], json!([790, 791]));
}

#[test]
fn schedule_is_deterministic_and_round_trips_through_verify() {
    let dir = TempDir::new().unwrap();
    let (s1, s2) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    let (j1, j2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let o1 = run(&[
        "schedule",
        s(&cc_path()),
        "-o",
        s(&s1),
        "--solution",
        s(&j1),
    ]);
    let o2 = run(&[
        "schedule",
        s(&cc_path()),
        "-o",
        s(&s2),
        "--solution",
        s(&j2),
    ]);
    assert!(
        o1.status.success(),
        "{}",
        String::from_utf8_lossy(&o1.stderr)
    );
    assert_eq!(o1.stdout, o2.stdout);
    let text = std::fs::read_to_string(&s1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&s2).unwrap());
    assert_eq!(std::fs::read(&j1).unwrap(), std::fs::read(&j2).unwrap());

    let parsed = ScheduleFile::parse(&text).unwrap();
    assert_eq!(parsed.to_text(), text);
    assert_eq!(parsed.mu, Some(8));

    let o = run(&["--json", "verify", s(&cc_path()), s(&s1)]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["model_violation"], Value::Null);
    assert_eq!(v["emulated"]["status"], "passed");
    assert_eq!(v["switches"], json!(parsed.schedule.switch_count()));

    let sol: Value = serde_json::from_slice(&std::fs::read(&j1).unwrap()).unwrap();
    assert_eq!(sol["sw"].as_array().unwrap().len(), 801);
}

#[test]
fn report_puts_switching_runtime_between_the_baselines() {
    let dir = TempDir::new().unwrap();
    let sched = dir.path().join("s.txt");
    assert!(run(&["schedule", s(&cc_path()), "-o", s(&sched)])
        .status
        .success());

    let o = run(&["report", s(&cc_path()), "--schedule", s(&sched)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let labels: Vec<&str> = text
        .lines()
        .skip(1)
        .take(3)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(labels, ["all-lo", "all-hi", "switching"]);

    let o = run(&["--json", "report", s(&cc_path()), "--schedule", s(&sched)]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let rt = |i: usize| rows[i]["report"]["runtime"].as_f64().unwrap();
    assert!(
        rt(0) < rt(2) && rt(2) < rt(1),
        "{} {} {}",
        rt(0),
        rt(2),
        rt(1)
    );
}

#[test]
fn simulate_writes_the_csv_contract() {
    let o = run(&["simulate", s(&cc_path())]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("sample,t_seconds,sw,y_1,band_lo,band_hi,cum_cost")
    );
    assert_eq!(lines.count(), 801);

    let o = run(&["simulate", s(&cc_path()), "--mode", "lo"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(2).unwrap().starts_with("1,0.01,0,"));

    let o = run(&["simulate", s(&cc_path()), "--mode", "schedule"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn no_windows_gives_the_all_hi_schedule() {
    let dir = TempDir::new().unwrap();
    // The only window would start at ceil(T_p / h) = 3, past N = 2.
    let cfg = write_config(&dir, "short.json", &small(0.2));
    let o = run(&["intervals", s(&cfg)]);
    assert!(stdout(&o).ends_with("mu 0\n"), "{}", stdout(&o));
    let o = run(&["schedule", s(&cfg)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let file = ScheduleFile::parse(&stdout(&o)).unwrap();
    assert_eq!(file.schedule, precswitch::schedule::Schedule::all_hi(2));
    assert_eq!(file.mu, Some(0));
}

#[test]
fn invalid_configs_exit_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let mut v = small(3.0);
    v["system"]["h"] = json!(0.0);
    v["system"]["A"] = json!([[0.5, 0.1]]);
    let cfg = write_config(&dir, "bad.json", &v);
    let o = run(&["--json", "intervals", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let paths: Vec<&str> = err["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["path"].as_str().unwrap())
        .collect();
    assert!(
        paths.contains(&"system.h") && paths.contains(&"system.A"),
        "{paths:?}"
    );

    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["intervals", s(&missing)]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn infeasible_band_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    let mut v = small(3.0);
    v["scenario"]["band"] = json!({ "absolute": 0.01 });
    v["precision"] = json!({ "error_lo": 0.1, "error_hi": 0.05 });
    let cfg = write_config(&dir, "tight.json", &v);
    let o = run(&["schedule", s(&cfg)]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(o.stdout.is_empty());
}

#[test]
fn node_limit_exits_with_code_three() {
    let dir = TempDir::new().unwrap();
    let mut v = cc_value();
    v["solver"]["max_nodes"] = json!(1);
    let cfg = write_config(&dir, "limited.json", &v);
    let o = run(&["schedule", s(&cfg)]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
