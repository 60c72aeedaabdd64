//! Switching windows: sample ranges in which the precision may change once.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::lti::{ceil_div, to_micros, ScenarioSpec, TimeGrid, TimingMetrics};

/// Ordered, disjoint windows `[L_β, U_β]` of sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SwitchingWindows {
    pub windows: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SwitchingWindows {
    pub fn new(windows: Vec<(usize, usize)>) -> Self {
        Self {
            windows,
            warnings: Vec::new(),
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn mu(&self) -> usize {
        self.windows.len()
    }

    /// Number of samples covered by all windows.
    pub fn covered_samples(&self) -> usize {
        self.windows.iter().map(|(l, u)| u - l + 1).sum()
    }

    /// Index of the window containing `sample`.
    pub fn window_of(&self, sample: usize) -> Option<usize> {
        let idx = self.windows.partition_point(|&(_, u)| u < sample);
        match self.windows.get(idx) {
            Some(&(l, _)) if l <= sample => Some(idx),
            _ => None,
        }
    }
}

impl fmt::Display for SwitchingWindows {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .windows
            .iter()
            .map(|(l, u)| format!("[{l},{u}]"))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntervalError {
    #[error("windows {first} {first_range:?} and {second} {second_range:?} overlap")]
    Overlap {
        first: usize,
        second: usize,
        first_range: (usize, usize),
        second_range: (usize, usize),
    },
    #[error("window {beta} {range:?} is invalid: {reason}")]
    Invalid {
        beta: usize,
        range: (i64, i64),
        reason: String,
    },
}

/// Problems found by [`validate_windows`]. Window numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowDiagnostic {
    Inverted {
        beta: usize,
        lower: usize,
        upper: usize,
    },
    BeforeFirstSample {
        beta: usize,
    },
    OutOfRange {
        beta: usize,
        upper: usize,
        horizon: usize,
    },
    Overlap {
        first: usize,
        second: usize,
    },
}

impl fmt::Display for WindowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowDiagnostic::Inverted { beta, lower, upper } => {
                write!(
                    f,
                    "window {beta}: lower bound {lower} exceeds upper bound {upper}"
                )
            }
            WindowDiagnostic::BeforeFirstSample { beta } => {
                write!(f, "window {beta}: starts at sample 0")
            }
            WindowDiagnostic::OutOfRange {
                beta,
                upper,
                horizon,
            } => {
                write!(
                    f,
                    "window {beta}: upper bound {upper} exceeds horizon {horizon}"
                )
            }
            WindowDiagnostic::Overlap { first, second } => {
                write!(
                    f,
                    "windows {first} and {second} overlap or are out of order"
                )
            }
        }
    }
}

/// Checks bounds, ordering and disjointness; returns every violation.
pub fn validate_windows(w: &SwitchingWindows, horizon: usize) -> Vec<WindowDiagnostic> {
    let mut out = Vec::new();
    for (idx, &(lower, upper)) in w.windows.iter().enumerate() {
        let beta = idx + 1;
        if lower > upper {
            out.push(WindowDiagnostic::Inverted { beta, lower, upper });
        }
        if lower == 0 {
            out.push(WindowDiagnostic::BeforeFirstSample { beta });
        }
        if upper > horizon {
            out.push(WindowDiagnostic::OutOfRange {
                beta,
                upper,
                horizon,
            });
        }
        if idx > 0 && w.windows[idx - 1].1 >= lower {
            out.push(WindowDiagnostic::Overlap {
                first: beta - 1,
                second: beta,
            });
        }
    }
    out
}

/// Closed-form window count `(2r - 1) + max(0, ⌈(T - (t_r + 2 T_s)) / T_s⌉)`.
pub fn expected_window_count(scen: &ScenarioSpec, settling: f64) -> usize {
    let r = scen.steps.len();
    let last = scen.steps.last().map_or(0.0, |s| s.time);
    let tail = to_micros(scen.horizon) - to_micros(last) - 2 * to_micros(settling);
    let post = ceil_div(tail, to_micros(settling).max(1)).max(0) as usize;
    2 * r - 1 + post
}

/// Builds one window around the first transient, two per later step and
/// one every `⌈T_s/h⌉` samples once the last step has settled twice over.
///
/// Step windows reaching past `horizon` are clipped, post-settle windows
/// past it are dropped; both are reported in `warnings`.
pub fn build_switching_windows(
    scen: &ScenarioSpec,
    metrics: &TimingMetrics,
    grid: TimeGrid,
    horizon: usize,
) -> Result<SwitchingWindows, IntervalError> {
    let ceil = |t: f64| grid.ceil_samples(t);
    let mut raw: Vec<(i64, i64)> = vec![(ceil(metrics.peak), ceil(metrics.settling))];
    for step in scen.steps.iter().skip(1) {
        let t = step.time;
        raw.push((ceil(t), ceil(t + metrics.rise / 2.0)));
        raw.push((ceil(t + metrics.peak), ceil(t + metrics.settling)));
    }
    let step_windows = raw.len();
    let last = scen.steps.last().map_or(0.0, |s| s.time);
    let tau = ceil(last + 2.0 * metrics.settling);
    let stride = ceil(metrics.settling);
    let post = expected_window_count(scen, metrics.settling) - step_windows;
    for k in 0..post as i64 {
        raw.push((tau + k * stride, tau + k * stride + 1));
    }

    let n = horizon as i64;
    let mut windows = Vec::with_capacity(raw.len());
    let mut warnings = Vec::new();
    for (idx, &(lower, upper)) in raw.iter().enumerate() {
        let beta = idx + 1;
        if lower < 1 || lower > upper {
            return Err(IntervalError::Invalid {
                beta,
                range: (lower, upper),
                reason: if lower < 1 {
                    "must start at sample 1 or later".into()
                } else {
                    "lower bound exceeds upper bound".into()
                },
            });
        }
        if upper > n {
            if idx >= step_windows || lower > n {
                warnings.push(format!(
                    "window {beta} [{lower},{upper}] lies beyond sample {n}; dropped"
                ));
                continue;
            }
            warnings.push(format!(
                "window {beta} [{lower},{upper}] clipped to [{lower},{n}]"
            ));
            windows.push((lower as usize, horizon));
            continue;
        }
        windows.push((lower as usize, upper as usize));
    }
    for pair in windows.windows(2) {
        if pair[0].1 >= pair[1].0 {
            let first = windows.iter().position(|w| *w == pair[0]).unwrap() + 1;
            return Err(IntervalError::Overlap {
                first,
                second: first + 1,
                first_range: pair[0],
                second_range: pair[1],
            });
        }
    }
    Ok(SwitchingWindows { windows, warnings })
}
