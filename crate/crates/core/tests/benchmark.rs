use std::path::PathBuf;

use precswitch::config::{ErrorSource, GainSource, RunConfig};
use precswitch::lti::{dlqr, simulate_nominal};
use precswitch::precision::{conservative_step_error_bound, step_error_breakdown, RoundingSpec};

fn cc() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("benchmarks/cc.json");
    RunConfig::from_path(path).expect("cc.json parses")
}

#[test]
fn cc_config_has_the_documented_shape() {
    let cfg = cc();
    assert_eq!(cfg.system.states(), 3);
    assert_eq!(cfg.system.inputs(), 1);
    assert_eq!(cfg.system.h, 0.01);
    assert_eq!(cfg.scenario.steps.len(), 4);
    assert_eq!(cfg.gain, GainSource::Given);
    assert_eq!(cfg.errors, ErrorSource::Given);
    assert_eq!(
        (cfg.scenario.error_lo, cfg.scenario.error_hi),
        (0.146, 1.74e-5)
    );
    let m = cfg.timing_metrics().unwrap();
    assert_eq!((m.rise, m.peak, m.settling), (0.6, 0.64, 1.2));
}

#[test]
fn frozen_gain_matches_a_fresh_lqr_design() {
    let cfg = cc();
    let s = &cfg.system;
    let k = dlqr(&s.a, &s.b, &s.q, &s.r).unwrap();
    for (a, b) in k.iter().zip(s.k.iter()) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn first_step_settles_into_the_band() {
    let cfg = cc();
    let traj = simulate_nominal(&cfg.system, &cfg.scenario).unwrap();
    // 35 km/h with a 5 % band, settled by 1.2 s and held until the next step.
    for k in 120..180 {
        let y = traj.y[k][0];
        assert!((33.25..=36.75).contains(&y), "sample {k}: {y}");
    }
}

#[test]
fn ranges_cover_the_nominal_trajectory() {
    let cfg = cc();
    let ranges = cfg.ranges.as_ref().expect("cc.json carries ranges");
    let traj = simulate_nominal(&cfg.system, &cfg.scenario).unwrap();
    for x in &traj.x {
        for (v, (lo, hi)) in x.iter().zip(&ranges.state) {
            assert!(lo <= v && v <= hi, "{v} outside [{lo}, {hi}]");
        }
    }
    for u in &traj.u {
        let (lo, hi) = ranges.input[0];
        assert!(lo <= u[0] && u[0] <= hi, "{} outside [{lo}, {hi}]", u[0]);
    }
}

#[test]
fn measured_state_bound_has_the_published_magnitude() {
    let cfg = cc();
    let ranges = cfg.ranges.as_ref().unwrap();
    for (spec, published) in [
        (RoundingSpec::BINARY16, 1.46e-1),
        (RoundingSpec::BINARY32, 1.74e-5),
    ] {
        let parts = step_error_breakdown(&cfg.system, ranges, spec).unwrap();
        // y = x1, so the first state row is the update of the measured output.
        let measured = parts.state[0];
        assert!(
            measured > published / 10.0 && measured < published * 10.0,
            "{measured} vs {published}"
        );
        let worst = conservative_step_error_bound(&cfg.system, ranges, spec).unwrap();
        assert!(worst >= measured);
    }
}
