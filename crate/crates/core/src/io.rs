//! Text artifacts: the run-length schedule file and the trajectory CSV.
//!
//! Schedule files look like
//!
//! ```text
//! precswitch-schedule 1
//! N 800
//! mu 8
//! gap 7.5e-8
//! objective 341041.2
//! status gap_limit
//! segment 0 209 hi
//! segment 210 243 lo
//! segment 244 800 hi
//! ```
//!
//! Only `N` and the segments are required. Numbers are written in the
//! shortest form that parses back to the same bits, so a file read and
//! written again is byte-identical.

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::lti::{stage_costs, LtiError, ReferencePlan, ScenarioSpec, SystemSpec, Trajectory};
use crate::model::CostMode;
use crate::precision::Precision;
use crate::schedule::{Schedule, ScheduleError, Segment};
use crate::solver::SolveStatus;

const MAGIC: &str = "precswitch-schedule 1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("missing \"{0}\" line")]
    Missing(&'static str),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// A schedule with the solver summary it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleFile {
    pub schedule: Schedule,
    /// Number of switching windows.
    pub mu: Option<usize>,
    /// Relative optimality gap at termination.
    pub gap: Option<f64>,
    pub objective: Option<f64>,
    pub status: Option<SolveStatus>,
}

impl ScheduleFile {
    pub fn bare(schedule: Schedule) -> Self {
        Self {
            schedule,
            mu: None,
            gap: None,
            objective: None,
            status: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "N {}", self.schedule.horizon());
        if let Some(mu) = self.mu {
            let _ = writeln!(s, "mu {mu}");
        }
        if let Some(gap) = self.gap {
            let _ = writeln!(s, "gap {gap:?}");
        }
        if let Some(obj) = self.objective {
            let _ = writeln!(s, "objective {obj:?}");
        }
        if let Some(status) = self.status {
            let _ = writeln!(s, "status {status}");
        }
        for seg in self.schedule.segments() {
            let _ = writeln!(
                s,
                "segment {} {} {}",
                seg.start,
                seg.end,
                seg.precision.as_str()
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut horizon = None;
        let mut file = ScheduleFile::bare(Schedule::all_hi(0));
        let mut segments = Vec::new();
        let mut saw_magic = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let fail = |reason: String| FormatError::Line { line, reason };
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            if !saw_magic {
                if content != MAGIC {
                    return Err(fail(format!("expected \"{MAGIC}\"")));
                }
                saw_magic = true;
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let want = |n: usize| {
                if fields.len() == n {
                    Ok(())
                } else {
                    Err(fail(format!(
                        "expected {} value(s) after \"{}\"",
                        n - 1,
                        fields[0]
                    )))
                }
            };
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| fail(format!("bad integer \"{s}\": {e}")))
            };
            let real = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| fail(format!("bad number \"{s}\": {e}")))
            };
            match fields[0] {
                "N" => {
                    want(2)?;
                    horizon = Some(int(fields[1])?);
                }
                "mu" => {
                    want(2)?;
                    file.mu = Some(int(fields[1])?);
                }
                "gap" => {
                    want(2)?;
                    file.gap = Some(real(fields[1])?);
                }
                "objective" => {
                    want(2)?;
                    file.objective = Some(real(fields[1])?);
                }
                "status" => {
                    want(2)?;
                    file.status = Some(fields[1].parse().map_err(fail)?);
                }
                "segment" => {
                    want(4)?;
                    let precision = match fields[3] {
                        "hi" => Precision::Hi,
                        "lo" => Precision::Lo,
                        other => {
                            return Err(fail(format!(
                                "precision must be hi or lo, found \"{other}\""
                            )))
                        }
                    };
                    segments.push(Segment {
                        start: int(fields[1])?,
                        end: int(fields[2])?,
                        precision,
                    });
                }
                other => return Err(fail(format!("unknown record \"{other}\""))),
            }
        }
        if !saw_magic {
            return Err(FormatError::Missing(MAGIC));
        }
        let horizon = horizon.ok_or(FormatError::Missing("N"))?;
        file.schedule = Schedule::new(segments, horizon)?;
        Ok(file)
    }
}

/// Writes `sample, t_seconds, sw, y_1..y_q, band_lo, band_hi, cum_cost`.
///
/// `sw` is 1 for hi and 0 for lo, and empty for an exact trajectory. Band
/// cells are empty outside constrained spans. With several outputs the band
/// columns become `band_lo_j, band_hi_j` per output.
pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    traj: &Trajectory,
    precisions: Option<&[Precision]>,
    cost_mode: CostMode,
) -> Result<(), CsvError> {
    let grid = sys.grid()?;
    let q = sys.outputs();
    let plan = ReferencePlan::new(sys, scen)?;
    let spans = scen.band_spans(grid);
    let stages = match cost_mode {
        CostMode::Deviation => stage_costs(traj, Some(&plan), &sys.q, &sys.r)?,
        CostMode::Raw => stage_costs(traj, None, &sys.q, &sys.r)?,
    };

    let mut header = vec!["sample".to_string(), "t_seconds".into(), "sw".into()];
    header.extend((1..=q).map(|j| format!("y_{j}")));
    if q == 1 {
        header.extend(["band_lo".to_string(), "band_hi".into()]);
    } else {
        for j in 1..=q {
            header.extend([format!("band_lo_{j}"), format!("band_hi_{j}")]);
        }
    }
    header.push("cum_cost".into());
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(&header)?;

    let mut cum = 0.0;
    for (k, stage) in stages.iter().enumerate() {
        cum += stage;
        let mut row = vec![
            k.to_string(),
            format!("{:?}", grid.time_of(k)),
            String::new(),
        ];
        if let Some(p) = precisions {
            row[2] = if p[k].is_hi() { "1" } else { "0" }.into();
        }
        row.extend(traj.y[k].iter().map(|v| format!("{v:?}")));
        let span = spans.iter().find(|s| s.contains(k));
        for j in 0..q {
            match span {
                Some(s) => row.extend([format!("{:?}", s.lo[j]), format!("{:?}", s.hi[j])]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(format!("{cum:?}"));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Lti(#[from] LtiError),
}
