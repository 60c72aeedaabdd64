//! End-to-end synthesis: windows, program, solve, run-length extraction,
//! and post-hoc verification against the error model and the emulation.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::intervals::{build_switching_windows, IntervalError, SwitchingWindows};
use crate::lti::{
    check_settling, lqr_cost, lqr_cost_deviation, time_domain_metrics, BandViolation, LqrCost,
    LtiError, ReferencePlan, ScenarioSpec, SystemSpec, TimingMetrics, Trajectory,
};
use crate::model::{
    build_schedule_program, CostMode, ModelError, ModelOptions, ScheduleEvaluator, VarKind,
};
use crate::precision::{simulate_rounded_with_plan, FormatPair, Precision, PrecisionError};
use crate::solver::{solve_miqp, MiqpSolution, SolveStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub precision: Precision,
}

/// Run-length precision assignment over samples `0..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    segments: Vec<Segment>,
    horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("malformed schedule: {0}")]
    Malformed(String),
    #[error("no feasible schedule{}", match .tightest {
        Some(v) => format!("; tightest band row: {v}"),
        None => String::new(),
    })]
    NoFeasibleSchedule { tightest: Option<BandViolation> },
    #[error("node limit reached after {nodes} nodes without a feasible schedule")]
    LimitWithoutIncumbent { nodes: u64 },
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Precision(#[from] PrecisionError),
}

impl Schedule {
    /// Checks that segments partition `0..=horizon`, alternate and start hi.
    pub fn new(segments: Vec<Segment>, horizon: usize) -> Result<Self, ScheduleError> {
        let bad = |m: String| Err(ScheduleError::Malformed(m));
        let Some(first) = segments.first() else {
            return bad("no segments".into());
        };
        if first.start != 0 {
            return bad(format!("first segment starts at {}", first.start));
        }
        if first.precision != Precision::Hi {
            return bad("first segment must be hi".into());
        }
        for (k, s) in segments.iter().enumerate() {
            if s.start > s.end {
                return bad(format!("segment {k} [{}, {}] is empty", s.start, s.end));
            }
            if k > 0 {
                let prev = &segments[k - 1];
                if s.start != prev.end + 1 {
                    return bad(format!(
                        "segment {k} starts at {} after {}",
                        s.start, prev.end
                    ));
                }
                if s.precision == prev.precision {
                    return bad(format!("segments {} and {k} share a precision", k - 1));
                }
            }
        }
        let last = segments.last().unwrap().end;
        if last != horizon {
            return bad(format!("segments end at {last}, horizon is {horizon}"));
        }
        Ok(Self { segments, horizon })
    }

    pub fn from_precisions(levels: &[Precision]) -> Result<Self, ScheduleError> {
        if levels.is_empty() {
            return Err(ScheduleError::Malformed("empty precision sequence".into()));
        }
        let mut segments: Vec<Segment> = Vec::new();
        for (i, &p) in levels.iter().enumerate() {
            match segments.last_mut() {
                Some(s) if s.precision == p => s.end = i,
                _ => segments.push(Segment {
                    start: i,
                    end: i,
                    precision: p,
                }),
            }
        }
        Self::new(segments, levels.len() - 1)
    }

    pub fn from_switches(sw: &[bool]) -> Result<Self, ScheduleError> {
        let levels: Vec<Precision> = sw.iter().map(|&b| Precision::from_switch(b)).collect();
        Self::from_precisions(&levels)
    }

    pub fn all_hi(horizon: usize) -> Self {
        Self::from_switches(&vec![true; horizon + 1]).unwrap()
    }

    /// Lo from sample 1 on; sample 0 carries the initial condition in hi.
    pub fn all_lo(horizon: usize) -> Self {
        let mut sw = vec![false; horizon + 1];
        sw[0] = true;
        Self::from_switches(&sw).unwrap()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn precisions(&self) -> Vec<Precision> {
        let mut out = Vec::with_capacity(self.horizon + 1);
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.precision, s.end - s.start + 1));
        }
        out
    }

    pub fn switches(&self) -> Vec<bool> {
        self.precisions()
            .into_iter()
            .map(Precision::is_hi)
            .collect()
    }

    /// Switch vector as `0.0`/`1.0`.
    pub fn switch_values(&self) -> Vec<f64> {
        self.precisions()
            .into_iter()
            .map(|p| if p.is_hi() { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn switch_count(&self) -> usize {
        self.segments.len() - 1
    }

    /// Share of lo samples among the controlled samples `1..=N`.
    pub fn lo_fraction(&self) -> f64 {
        if self.horizon == 0 {
            return 0.0;
        }
        let lo: usize = self
            .segments
            .iter()
            .filter(|s| s.precision == Precision::Lo)
            .map(|s| s.end - s.start + 1)
            .sum();
        lo as f64 / self.horizon as f64
    }

    /// Checks that every change happens inside a window, at most once each.
    pub fn check_windows(&self, windows: &SwitchingWindows) -> Result<(), ScheduleError> {
        let mut used = vec![false; windows.mu()];
        for s in &self.segments[1..] {
            match windows.window_of(s.start) {
                None => {
                    return Err(ScheduleError::Malformed(format!(
                        "switch at sample {} is outside every window",
                        s.start
                    )))
                }
                Some(b) if used[b] => {
                    return Err(ScheduleError::Malformed(format!(
                        "window {} holds more than one switch",
                        b + 1
                    )))
                }
                Some(b) => used[b] = true,
            }
        }
        Ok(())
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| format!("{}[{},{}]", s.precision.as_str(), s.start, s.end))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthesisOptions {
    pub model: ModelOptions,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub schedule: Schedule,
    pub solution: MiqpSolution,
    pub windows: SwitchingWindows,
    pub metrics: TimingMetrics,
}

/// Nominal step-response metrics of the first step, used for the windows.
pub fn scenario_metrics(sys: &SystemSpec, scen: &ScenarioSpec) -> Result<TimingMetrics, LtiError> {
    let first = scen.steps.first().ok_or(LtiError::InvalidParameter {
        name: "steps",
        reason: "at least one step is required".into(),
    })?;
    time_domain_metrics(
        sys,
        &first.reference,
        &scen.band_half_width(0),
        scen.horizon,
    )
}

pub fn switching_windows(
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    metrics: &TimingMetrics,
) -> Result<SwitchingWindows, ScheduleError> {
    let grid = sys.grid()?;
    Ok(build_switching_windows(
        scen,
        metrics,
        grid,
        grid.horizon_samples(scen.horizon),
    )?)
}

/// Windows, program, presolve, branch-and-bound and run-length extraction.
///
/// A node-limit stop with an incumbent still returns it; the status is in
/// `solution`.
pub fn synthesize_schedule(
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    metrics: Option<TimingMetrics>,
    options: &SynthesisOptions,
) -> Result<Synthesis, ScheduleError> {
    sys.validate()?;
    scen.validate(sys.outputs(), sys.grid()?)?;
    let metrics = match metrics {
        Some(m) => m,
        None => scenario_metrics(sys, scen)?,
    };
    let windows = switching_windows(sys, scen, &metrics)?;
    let program = build_schedule_program(sys, scen, &windows, &options.model)?;
    let solution = solve_miqp(&program, options.solver)?;
    let Some(values) = solution.assignment.as_ref() else {
        return Err(match solution.status {
            SolveStatus::NodeLimit => ScheduleError::LimitWithoutIncumbent {
                nodes: solution.nodes,
            },
            _ => {
                let ev = ScheduleEvaluator::new(sys, scen, options.model)?;
                let ones = vec![1.0; ev.horizon() + 1];
                let traj = ev.trajectory(&ones);
                let tightest = ev
                    .worst_band_excess(&traj)
                    .or_else(|| ev.band_violation(&ones, &traj));
                ScheduleError::NoFeasibleSchedule { tightest }
            }
        });
    };
    let sw: Vec<bool> = (0..=program.horizon)
        .map(|i| {
            let var = program
                .find(VarKind::Switch(i))
                .expect("switch variable per sample");
            values[var] > 0.5
        })
        .collect();
    let schedule = Schedule::from_switches(&sw)?;
    Ok(Synthesis {
        schedule,
        solution,
        windows,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EmulatedCheck {
    Passed,
    Violated { violation: BandViolationRecord },
    NonFinite { sample: usize },
}

impl EmulatedCheck {
    pub fn passed(&self) -> bool {
        matches!(self, EmulatedCheck::Passed)
    }
}

impl fmt::Display for EmulatedCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmulatedCheck::Passed => f.write_str("pass"),
            EmulatedCheck::Violated { violation } => write!(f, "fail ({violation})"),
            EmulatedCheck::NonFinite { sample } => write!(f, "non-finite from sample {sample}"),
        }
    }
}

/// Serializable copy of a [`BandViolation`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandViolationRecord {
    pub step: usize,
    pub sample: usize,
    pub output: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<&BandViolation> for BandViolationRecord {
    fn from(v: &BandViolation) -> Self {
        Self {
            step: v.step,
            sample: v.sample,
            output: v.output,
            value: v.value,
            lo: v.lo,
            hi: v.hi,
        }
    }
}

impl fmt::Display for BandViolationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} sample {} output {}: y = {} outside [{}, {}]",
            self.step, self.sample, self.output, self.value, self.lo, self.hi
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// First band violation of the error-bounded model, if any.
    pub model_violation: Option<BandViolationRecord>,
    pub emulated: EmulatedCheck,
    #[serde(serialize_with = "ser_cost")]
    pub model_cost: LqrCost,
    #[serde(serialize_with = "ser_cost")]
    pub emulated_cost: LqrCost,
    /// `Σ t_p` over samples `1..=N`.
    pub runtime: f64,
    /// `w1·runtime + w2·model_cost`.
    pub objective: f64,
    pub switches: usize,
    pub lo_fraction: f64,
}

fn ser_cost<S: serde::Serializer>(c: &LqrCost, s: S) -> Result<S::Ok, S::Error> {
    match c {
        LqrCost::Finite(v) => s.serialize_f64(*v),
        LqrCost::NonFinite(_) => s.serialize_none(),
    }
}

impl VerificationReport {
    pub fn model_passed(&self) -> bool {
        self.model_violation.is_none()
    }
}

fn first_non_finite(traj: &Trajectory) -> Option<usize> {
    (0..traj.len()).find(|&i| {
        let bad = |v: &nalgebra::DVector<f64>| v.iter().any(|x| !x.is_finite());
        bad(&traj.x[i]) || bad(&traj.u[i]) || bad(&traj.y[i])
    })
}

/// Checks a schedule against the error-bounded model and the bit-accurate
/// emulation, and reports runtime and costs.
pub fn verify_schedule(
    sched: &Schedule,
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    model: &ModelOptions,
    formats: FormatPair,
) -> Result<VerificationReport, ScheduleError> {
    let grid = sys.grid()?;
    let ev = ScheduleEvaluator::new(sys, scen, *model)?;
    if sched.horizon() != ev.horizon() {
        return Err(ScheduleError::Malformed(format!(
            "schedule covers {} samples, scenario has {}",
            sched.horizon(),
            ev.horizon()
        )));
    }
    let sw = sched.switch_values();
    let traj = ev.trajectory(&sw);
    let parts = ev.objective_of(&sw, &traj);
    let model_violation = ev
        .band_violation(&sw, &traj)
        .map(|v| BandViolationRecord::from(&v));

    let plan: &ReferencePlan = ev.plan();
    let emu = simulate_rounded_with_plan(sys, plan, &sched.precisions(), formats)?;
    let emulated = match first_non_finite(&emu) {
        Some(sample) => EmulatedCheck::NonFinite { sample },
        None => match check_settling(&emu, scen, grid).violation {
            Some(v) => EmulatedCheck::Violated {
                violation: BandViolationRecord::from(&v),
            },
            None => EmulatedCheck::Passed,
        },
    };
    let emulated_cost = match model.cost_mode {
        CostMode::Deviation => lqr_cost_deviation(&emu, plan, &sys.q, &sys.r)?,
        CostMode::Raw => lqr_cost(&emu, &sys.q, &sys.r)?,
    };
    Ok(VerificationReport {
        model_violation,
        emulated,
        model_cost: parts.cost,
        emulated_cost,
        runtime: parts.runtime,
        objective: parts.total,
        switches: sched.switch_count(),
        lo_fraction: sched.lo_fraction(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub label: &'static str,
    pub report: VerificationReport,
}

/// All-lo, all-hi and the given schedule, verified side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineComparison {
    pub rows: Vec<BaselineRow>,
}

/// `(base - value) / base · 100`; positive means `value` improves on `base`.
pub fn percent_reduction(base: f64, value: f64) -> Option<f64> {
    (base.is_finite() && value.is_finite() && base != 0.0).then(|| (base - value) / base * 100.0)
}

impl BaselineComparison {
    pub fn all_lo(&self) -> &VerificationReport {
        &self.rows[0].report
    }

    pub fn all_hi(&self) -> &VerificationReport {
        &self.rows[1].report
    }

    pub fn switching(&self) -> &VerificationReport {
        &self.rows[2].report
    }

    pub fn runtime_reduction_vs_hi(&self) -> Option<f64> {
        percent_reduction(self.all_hi().runtime, self.switching().runtime)
    }

    pub fn cost_reduction_vs_lo(&self) -> Option<f64> {
        percent_reduction(
            self.all_lo().emulated_cost.value(),
            self.switching().emulated_cost.value(),
        )
    }

    pub fn cost_reduction_vs_hi(&self) -> Option<f64> {
        percent_reduction(
            self.all_hi().emulated_cost.value(),
            self.switching().emulated_cost.value(),
        )
    }
}

pub fn compare_baselines(
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    sched: &Schedule,
    model: &ModelOptions,
    formats: FormatPair,
) -> Result<BaselineComparison, ScheduleError> {
    let n = sched.horizon();
    let mut rows = Vec::with_capacity(3);
    for (label, s) in [
        ("all-lo", Schedule::all_lo(n)),
        ("all-hi", Schedule::all_hi(n)),
        ("switching", sched.clone()),
    ] {
        rows.push(BaselineRow {
            label,
            report: verify_schedule(&s, sys, scen, model, formats)?,
        });
    }
    Ok(BaselineComparison { rows })
}
