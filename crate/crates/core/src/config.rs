//! Run configuration: a JSON tree with the top-level blocks `system`,
//! `scenario`, `precision` and `solver`.
//!
//! Matrices are row-major nested arrays (a bare number is a 1x1 matrix),
//! times are in seconds. Unknown keys are rejected, and every problem found
//! is reported at once with the key path it belongs to.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::lti::{dlqr, Band, ScenarioSpec, Step, SystemSpec, TimingMetrics};
use crate::model::{CostMode, ErrorMode, ModelOptions};
use crate::precision::{conservative_step_error_bound, FormatPair, RoundingSpec, VariableRanges};
use crate::schedule::{scenario_metrics, ScheduleError, SynthesisOptions};
use crate::solver::SolverOptions;

/// One problem in a configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted key path such as `system.A` or `scenario.steps[2].time`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed JSON at line {line}, column {column}: {reason}")]
    Syntax {
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("{} configuration error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
}

impl ConfigError {
    /// Every problem as a diagnostic; I/O and syntax errors have an empty path.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            ConfigError::Invalid(d) => d.clone(),
            other => vec![Diagnostic {
                path: String::new(),
                message: other.to_string(),
            }],
        }
    }
}

/// Where the controller gain came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    Given,
    Lqr,
}

/// Where the per-sample roundoff bounds came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    Given,
    /// Computed from `precision.ranges` with the conservative operation model.
    Derived,
}

/// Timing metrics fixed by the configuration; missing ones are measured on
/// the nominal response.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MetricOverrides {
    pub rise: Option<f64>,
    pub peak: Option<f64>,
    pub settling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub scenario: ScenarioSpec,
    pub metrics: MetricOverrides,
    pub formats: FormatPair,
    pub gain: GainSource,
    pub errors: ErrorSource,
    /// Variable ranges, kept even when explicit bounds take precedence.
    pub ranges: Option<VariableRanges>,
    pub options: SynthesisOptions,
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            reason: e.to_string(),
        })?;
        let mut w = Walker::default();
        let cfg = parse(&mut w, &value);
        match cfg {
            Some(cfg) if w.diags.is_empty() => Ok(cfg),
            _ => {
                if w.diags.is_empty() {
                    w.err("", "configuration is incomplete");
                }
                Err(ConfigError::Invalid(w.diags))
            }
        }
    }

    /// Overrides merged with metrics measured on the nominal response. The
    /// nominal simulation only runs when something is missing.
    pub fn timing_metrics(&self) -> Result<TimingMetrics, ScheduleError> {
        let o = self.metrics;
        if let (Some(rise), Some(peak), Some(settling)) = (o.rise, o.peak, o.settling) {
            return Ok(TimingMetrics::new(rise, peak, settling));
        }
        let nominal = scenario_metrics(&self.system, &self.scenario)?;
        Ok(TimingMetrics::new(
            o.rise.unwrap_or(nominal.rise),
            o.peak.unwrap_or(nominal.peak),
            o.settling.unwrap_or(nominal.settling),
        ))
    }
}

#[derive(Default)]
struct Walker {
    diags: Vec<Diagnostic>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

impl Walker {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            path: path.to_string(),
            message: message.into(),
        });
    }

    /// Checks for an object with the given keys; unknown and missing keys are
    /// reported.
    fn object<'v>(
        &mut self,
        path: &str,
        v: &'v Value,
        required: &[&str],
        optional: &[&str],
    ) -> Option<&'v Map<String, Value>> {
        let Value::Object(map) = v else {
            self.err(path, format!("expected an object, found {}", kind(v)));
            return None;
        };
        for key in map.keys() {
            if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
                self.err(&join(path, key), "unknown key");
            }
        }
        for key in required {
            if !map.contains_key(*key) {
                self.err(&join(path, key), "missing required key");
            }
        }
        Some(map)
    }

    fn number(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, format!("expected a finite number, found {}", kind(v)));
                None
            }
        }
    }

    fn positive(&mut self, path: &str, v: &Value) -> Option<f64> {
        let x = self.number(path, v)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.err(path, format!("must be positive, found {x}"));
            None
        }
    }

    fn non_negative(&mut self, path: &str, v: &Value) -> Option<f64> {
        let x = self.number(path, v)?;
        if x >= 0.0 {
            Some(x)
        } else {
            self.err(path, format!("must be non-negative, found {x}"));
            None
        }
    }

    fn count(&mut self, path: &str, v: &Value) -> Option<u64> {
        match v.as_u64() {
            Some(x) if x >= 1 => Some(x),
            _ => {
                self.err(path, "expected a positive integer");
                None
            }
        }
    }

    fn string<'v>(&mut self, path: &str, v: &'v Value) -> Option<&'v str> {
        let s = v.as_str();
        if s.is_none() {
            self.err(path, format!("expected a string, found {}", kind(v)));
        }
        s
    }

    fn vector(&mut self, path: &str, v: &Value) -> Option<DVector<f64>> {
        if v.is_number() {
            return self.number(path, v).map(|x| DVector::from_element(1, x));
        }
        let Value::Array(items) = v else {
            self.err(
                path,
                format!("expected an array of numbers, found {}", kind(v)),
            );
            return None;
        };
        if items.is_empty() {
            self.err(path, "must not be empty");
            return None;
        }
        let vals: Vec<Option<f64>> = items
            .iter()
            .enumerate()
            .map(|(i, x)| self.number(&format!("{path}[{i}]"), x))
            .collect();
        vals.into_iter()
            .collect::<Option<Vec<f64>>>()
            .map(DVector::from_vec)
    }

    fn matrix(&mut self, path: &str, v: &Value) -> Option<DMatrix<f64>> {
        if v.is_number() {
            return self.number(path, v).map(|x| DMatrix::from_element(1, 1, x));
        }
        let Value::Array(rows) = v else {
            self.err(
                path,
                format!("expected a matrix as nested arrays, found {}", kind(v)),
            );
            return None;
        };
        if rows.is_empty() {
            self.err(path, "must have at least one row");
            return None;
        }
        let mut data = Vec::new();
        let mut cols = None;
        let mut ok = true;
        for (i, row) in rows.iter().enumerate() {
            let Value::Array(entries) = row else {
                self.err(
                    &format!("{path}[{i}]"),
                    format!("expected a row array, found {}", kind(row)),
                );
                ok = false;
                continue;
            };
            match cols {
                None => cols = Some(entries.len()),
                Some(c) if c != entries.len() => {
                    self.err(
                        path,
                        format!("rows have different lengths ({c} and {})", entries.len()),
                    );
                    return None;
                }
                _ => {}
            }
            for (j, x) in entries.iter().enumerate() {
                match self.number(&format!("{path}[{i}][{j}]"), x) {
                    Some(x) => data.push(x),
                    None => ok = false,
                }
            }
        }
        let cols = cols.unwrap_or(0);
        if cols == 0 {
            self.err(path, "must have at least one column");
            return None;
        }
        ok.then(|| DMatrix::from_row_slice(rows.len(), cols, &data))
    }

    /// Reports a shape mismatch at `path`.
    fn shape(&mut self, path: &str, m: &DMatrix<f64>, rows: usize, cols: usize, why: &str) -> bool {
        if m.nrows() == rows && m.ncols() == cols {
            return true;
        }
        self.err(
            path,
            format!(
                "expected {rows}x{cols} {why}, found {}x{}",
                m.nrows(),
                m.ncols()
            ),
        );
        false
    }
}

fn parse(w: &mut Walker, root: &Value) -> Option<RunConfig> {
    let top = w.object("", root, &["system", "scenario"], &["precision", "solver"])?;
    let system = top.get("system").and_then(|v| parse_system(w, v));
    let outputs = system.as_ref().map(|(s, _)| s.outputs());
    let scenario = top
        .get("scenario")
        .and_then(|v| parse_scenario(w, v, outputs));
    let null = Value::Object(Map::new());
    let precision = parse_precision(
        w,
        top.get("precision").unwrap_or(&null),
        system.as_ref().map(|(s, _)| s),
    );
    let options = parse_solver(w, top.get("solver").unwrap_or(&null));

    let ((system, gain), (mut scenario, metrics), precision, mut options) =
        (system?, scenario?, precision?, options?);
    options.model.error_mode = precision.mode;
    (scenario.error_lo, scenario.error_hi) = precision.bounds;
    match system.grid() {
        Ok(grid) => {
            if let Err(e) = scenario.validate(system.outputs(), grid) {
                w.err("scenario", e.to_string());
            }
        }
        Err(e) => w.err("system.h", e.to_string()),
    }
    Some(RunConfig {
        system,
        scenario,
        metrics,
        formats: precision.formats,
        gain,
        errors: precision.errors,
        ranges: precision.ranges,
        options,
    })
}

fn parse_system(w: &mut Walker, v: &Value) -> Option<(SystemSpec, GainSource)> {
    let map = w.object(
        "system",
        v,
        &["A", "B", "C", "h"],
        &["K", "Q", "R", "x0", "u0"],
    )?;
    let get = |k: &str| map.get(k);
    let a = get("A").and_then(|v| w.matrix("system.A", v));
    let b = get("B").and_then(|v| w.matrix("system.B", v));
    let c = get("C").and_then(|v| w.matrix("system.C", v));
    let h = get("h").and_then(|v| w.positive("system.h", v));
    let k = get("K").map(|v| w.matrix("system.K", v));
    let q = get("Q").map(|v| w.matrix("system.Q", v));
    let r = get("R").map(|v| w.matrix("system.R", v));
    let x0 = get("x0").map(|v| w.vector("system.x0", v));
    let u0 = get("u0").map(|v| w.vector("system.u0", v));

    let (a, b, c) = (a?, b?, c?);
    let n = a.nrows();
    if !w.shape("system.A", &a, n, n, "(square)") {
        return None;
    }
    let m = b.ncols();
    let mut ok = w.shape("system.B", &b, n, m, "(rows must match A)");
    ok &= w.shape("system.C", &c, c.nrows(), n, "(columns must match A)");
    let q = match q {
        Some(q) => Some(q?),
        None => None,
    };
    let r = match r {
        Some(r) => Some(r?),
        None => None,
    };
    if let Some(q) = &q {
        ok &= w.shape("system.Q", q, n, n, "(state weight)");
    }
    if let Some(r) = &r {
        ok &= w.shape("system.R", r, m, m, "(input weight)");
    }
    let k = match k {
        Some(k) => {
            let k = k?;
            ok &= w.shape("system.K", &k, m, n, "(input x state gain)");
            Some(k)
        }
        None => None,
    };
    let x0 = match x0 {
        Some(x) => Some(x?),
        None => None,
    };
    let u0 = match u0 {
        Some(u) => Some(u?),
        None => None,
    };
    if let Some(x) = &x0 {
        if x.len() != n {
            w.err(
                "system.x0",
                format!("expected {n} entries, found {}", x.len()),
            );
            ok = false;
        }
    }
    if let Some(u) = &u0 {
        if u.len() != m {
            w.err(
                "system.u0",
                format!("expected {m} entries, found {}", u.len()),
            );
            ok = false;
        }
    }
    let h = h?;
    if !ok {
        return None;
    }
    let q = q.unwrap_or_else(|| DMatrix::identity(n, n));
    let r = r.unwrap_or_else(|| DMatrix::identity(m, m));
    let (k, gain) = match k {
        Some(k) => (k, GainSource::Given),
        None => match dlqr(&a, &b, &q, &r) {
            Ok(k) => (k, GainSource::Lqr),
            Err(e) => {
                w.err(
                    "system.K",
                    format!("not given and the LQR design failed: {e}"),
                );
                return None;
            }
        },
    };
    let sys = SystemSpec::new(a, b, c, k, h)
        .and_then(|s| s.with_weights(q, r))
        .and_then(|s| {
            s.with_initial(
                x0.unwrap_or_else(|| DVector::zeros(n)),
                u0.unwrap_or_else(|| DVector::zeros(m)),
            )
        });
    match sys {
        Ok(sys) => Some((sys, gain)),
        Err(e) => {
            w.err("system", e.to_string());
            None
        }
    }
}

fn parse_scenario(
    w: &mut Walker,
    v: &Value,
    outputs: Option<usize>,
) -> Option<(ScenarioSpec, MetricOverrides)> {
    let map = w.object(
        "scenario",
        v,
        &[
            "steps",
            "band",
            "settling_time",
            "horizon",
            "runtime_lo",
            "runtime_hi",
        ],
        &["metrics"],
    )?;
    let steps = map.get("steps").and_then(|v| match v {
        Value::Array(items) if !items.is_empty() => {
            let parsed: Vec<Option<Step>> = items
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let path = format!("scenario.steps[{i}]");
                    let m = w.object(&path, s, &["time", "reference"], &[])?;
                    let time = m
                        .get("time")
                        .and_then(|t| w.non_negative(&format!("{path}.time"), t));
                    let reference = m
                        .get("reference")
                        .and_then(|r| w.vector(&format!("{path}.reference"), r));
                    let (time, reference) = (time?, reference?);
                    if let Some(q) = outputs {
                        if reference.len() != q {
                            w.err(
                                &format!("{path}.reference"),
                                format!(
                                    "expected {q} entries (one per output), found {}",
                                    reference.len()
                                ),
                            );
                            return None;
                        }
                    }
                    Some(Step::new(time, reference))
                })
                .collect();
            parsed.into_iter().collect::<Option<Vec<Step>>>()
        }
        _ => {
            w.err("scenario.steps", "expected a non-empty array of steps");
            None
        }
    });
    let band = map.get("band").and_then(|v| {
        let m = w.object("scenario.band", v, &[], &["percent", "absolute"])?;
        match (m.get("percent"), m.get("absolute")) {
            (Some(p), None) => w.positive("scenario.band.percent", p).map(Band::Percent),
            (None, Some(a)) => w.positive("scenario.band.absolute", a).map(Band::Absolute),
            _ => {
                w.err(
                    "scenario.band",
                    "give exactly one of \"percent\" or \"absolute\"",
                );
                None
            }
        }
    });
    let settling = map
        .get("settling_time")
        .and_then(|v| w.positive("scenario.settling_time", v));
    let horizon = map
        .get("horizon")
        .and_then(|v| w.positive("scenario.horizon", v));
    let t_lo = map
        .get("runtime_lo")
        .and_then(|v| w.non_negative("scenario.runtime_lo", v));
    let t_hi = map
        .get("runtime_hi")
        .and_then(|v| w.non_negative("scenario.runtime_hi", v));
    let mut metrics = MetricOverrides::default();
    let mut metrics_ok = true;
    if let Some(v) = map.get("metrics") {
        match w.object("scenario.metrics", v, &[], &["rise", "peak", "settling"]) {
            Some(m) => {
                for (key, slot) in [
                    ("rise", &mut metrics.rise),
                    ("peak", &mut metrics.peak),
                    ("settling", &mut metrics.settling),
                ] {
                    if let Some(x) = m.get(key) {
                        *slot = w.positive(&format!("scenario.metrics.{key}"), x);
                        metrics_ok &= slot.is_some();
                    }
                }
            }
            None => metrics_ok = false,
        }
    }
    let scen = ScenarioSpec {
        steps: steps?,
        band: band?,
        settling_time: settling?,
        horizon: horizon?,
        runtime_lo: t_lo?,
        runtime_hi: t_hi?,
        error_lo: 0.0,
        error_hi: 0.0,
    };
    metrics_ok.then_some((scen, metrics))
}

struct PrecisionBlock {
    formats: FormatPair,
    errors: ErrorSource,
    ranges: Option<VariableRanges>,
    mode: ErrorMode,
    bounds: (f64, f64),
}

fn parse_precision(w: &mut Walker, v: &Value, sys: Option<&SystemSpec>) -> Option<PrecisionBlock> {
    let map = w.object(
        "precision",
        v,
        &[],
        &["lo", "hi", "error_lo", "error_hi", "ranges", "error_mode"],
    )?;
    let mut format = |key: &str, default: RoundingSpec| -> Option<RoundingSpec> {
        let Some(v) = map.get(key) else {
            return Some(default);
        };
        let path = format!("precision.{key}");
        let name = w.string(&path, v)?;
        let spec = RoundingSpec::by_name(name);
        if spec.is_none() {
            w.err(
                &path,
                format!("unknown format \"{name}\" (binary16, binary32 or binary64)"),
            );
        }
        spec
    };
    let lo = format("lo", RoundingSpec::BINARY16);
    let hi = format("hi", RoundingSpec::BINARY32);
    let e_lo = map
        .get("error_lo")
        .map(|v| w.non_negative("precision.error_lo", v));
    let e_hi = map
        .get("error_hi")
        .map(|v| w.non_negative("precision.error_hi", v));
    let mode = match map.get("error_mode") {
        None => Some(ErrorMode::Signed),
        Some(v) => match w.string("precision.error_mode", v)? {
            "signed" => Some(ErrorMode::Signed),
            "symmetric" => Some(ErrorMode::Symmetric),
            other => {
                w.err(
                    "precision.error_mode",
                    format!("expected \"signed\" or \"symmetric\", found \"{other}\""),
                );
                None
            }
        },
    };
    let ranges = map.get("ranges").map(|v| parse_ranges(w, v, sys));
    let ranges = match ranges {
        Some(r) => Some(r?),
        None => None,
    };
    let formats = FormatPair { lo: lo?, hi: hi? };
    let mode = mode?;
    match (e_lo, e_hi) {
        (Some(lo), Some(hi)) => Some(PrecisionBlock {
            formats,
            errors: ErrorSource::Given,
            ranges,
            mode,
            bounds: (lo?, hi?),
        }),
        (None, None) => {
            let Some(ranges) = ranges else {
                if !map.contains_key("ranges") {
                    w.err(
                        "precision.ranges",
                        "required when error_lo and error_hi are not given",
                    );
                }
                return None;
            };
            let sys = sys?;
            let bound =
                |spec, w: &mut Walker| match conservative_step_error_bound(sys, &ranges, spec) {
                    Ok(b) => Some(b),
                    Err(e) => {
                        w.err("precision.ranges", e.to_string());
                        None
                    }
                };
            let bounds = (bound(formats.lo, w)?, bound(formats.hi, w)?);
            Some(PrecisionBlock {
                formats,
                errors: ErrorSource::Derived,
                ranges: Some(ranges),
                mode,
                bounds,
            })
        }
        (Some(_), None) => {
            w.err("precision.error_hi", "must be given together with error_lo");
            None
        }
        (None, Some(_)) => {
            w.err("precision.error_lo", "must be given together with error_hi");
            None
        }
    }
}

fn parse_ranges(w: &mut Walker, v: &Value, sys: Option<&SystemSpec>) -> Option<VariableRanges> {
    let map = w.object("precision.ranges", v, &["state", "input"], &[])?;
    let mut list = |key: &str, len: Option<usize>| -> Option<Vec<(f64, f64)>> {
        let path = format!("precision.ranges.{key}");
        let m = w.matrix(&path, map.get(key)?)?;
        if m.ncols() != 2 {
            w.err(&path, "expected one [lo, hi] pair per variable");
            return None;
        }
        if let Some(len) = len.filter(|&l| l != m.nrows()) {
            w.err(&path, format!("expected {len} pairs, found {}", m.nrows()));
            return None;
        }
        let pairs: Vec<(f64, f64)> = (0..m.nrows()).map(|i| (m[(i, 0)], m[(i, 1)])).collect();
        if let Some(i) = pairs.iter().position(|(lo, hi)| lo > hi) {
            w.err(&format!("{path}[{i}]"), "lower end exceeds upper end");
            return None;
        }
        Some(pairs)
    };
    let state = list("state", sys.map(|s| s.states()));
    let input = list("input", sys.map(|s| s.inputs()));
    Some(VariableRanges {
        state: state?,
        input: input?,
    })
}

fn parse_solver(w: &mut Walker, v: &Value) -> Option<SynthesisOptions> {
    let map = w.object(
        "solver",
        v,
        &[],
        &["gap", "max_nodes", "threads", "w1", "w2", "cost_mode"],
    )?;
    let mut solver = SolverOptions::default();
    let mut model = ModelOptions::default();
    let mut ok = true;
    if let Some(v) = map.get("gap") {
        ok &= w
            .non_negative("solver.gap", v)
            .map(|g| solver.gap = g)
            .is_some();
    }
    if let Some(v) = map.get("max_nodes") {
        ok &= w
            .count("solver.max_nodes", v)
            .map(|n| solver.max_nodes = n)
            .is_some();
    }
    if let Some(v) = map.get("threads") {
        ok &= w
            .count("solver.threads", v)
            .map(|n| solver.threads = n as usize)
            .is_some();
    }
    if let Some(v) = map.get("w1") {
        ok &= w
            .non_negative("solver.w1", v)
            .map(|x| model.w_runtime = x)
            .is_some();
    }
    if let Some(v) = map.get("w2") {
        ok &= w
            .non_negative("solver.w2", v)
            .map(|x| model.w_cost = x)
            .is_some();
    }
    if let Some(v) = map.get("cost_mode") {
        match w.string("solver.cost_mode", v) {
            Some("deviation") => model.cost_mode = CostMode::Deviation,
            Some("raw") => model.cost_mode = CostMode::Raw,
            Some(other) => {
                w.err(
                    "solver.cost_mode",
                    format!("expected \"deviation\" or \"raw\", found \"{other}\""),
                );
                ok = false;
            }
            None => ok = false,
        }
    }
    ok.then_some(SynthesisOptions { model, solver })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "system": { "A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "K": [[-0.3]], "h": 0.1 },
            "scenario": {
                "steps": [{ "time": 0.0, "reference": 1.0 }],
                "band": { "absolute": 0.5 },
                "settling_time": 0.5,
                "horizon": 2.0,
                "runtime_lo": 1.0,
                "runtime_hi": 2.0
            },
            "precision": { "error_lo": 0.01, "error_hi": 0.0 }
        })
    }

    fn paths(v: &Value) -> Vec<String> {
        match RunConfig::from_json_str(&v.to_string()) {
            Err(ConfigError::Invalid(d)) => d.into_iter().map(|d| d.path).collect(),
            other => panic!("expected diagnostics, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json_str(&minimal().to_string()).unwrap();
        assert_eq!(cfg.system.h, 0.1);
        assert_eq!(cfg.gain, GainSource::Given);
        assert_eq!(cfg.formats, FormatPair::default());
        assert_eq!(cfg.options.solver, SolverOptions::default());
        assert_eq!(cfg.scenario.error_lo, 0.01);
        assert_eq!(cfg.system.q, DMatrix::identity(1, 1));
    }

    #[test]
    fn zero_sampling_period_is_reported_at_its_key() {
        let mut v = minimal();
        v["system"]["h"] = json!(0.0);
        assert_eq!(paths(&v), vec!["system.h"]);
    }

    #[test]
    fn wrong_shape_names_the_matrix() {
        let mut v = minimal();
        v["system"]["A"] = json!([[0.5, 0.1]]);
        assert_eq!(paths(&v), vec!["system.A"]);
    }

    #[test]
    fn every_problem_is_reported_at_once() {
        let mut v = minimal();
        v["system"]["h"] = json!(-1.0);
        v["scenario"]["steps"][0]["time"] = json!("soon");
        v["scenario"]["extra"] = json!(1);
        v["solver"] = json!({ "gap": -1.0, "threads": 0 });
        let mut p = paths(&v);
        p.sort();
        assert_eq!(
            p,
            vec![
                "scenario.extra",
                "scenario.steps[0].time",
                "solver.gap",
                "solver.threads",
                "system.h"
            ]
        );

        let mut v = minimal();
        v["system"]["h"] = json!(0.0);
        v["system"]["A"] = json!([[0.5, 0.1]]);
        v["scenario"]["band"] = json!({ "percent": 0.0 });
        let mut p = paths(&v);
        p.sort();
        assert_eq!(p, vec!["scenario.band.percent", "system.A", "system.h"]);
    }

    #[test]
    fn missing_gain_comes_from_lqr() {
        let mut v = minimal();
        v["system"].as_object_mut().unwrap().remove("K");
        let cfg = RunConfig::from_json_str(&v.to_string()).unwrap();
        assert_eq!(cfg.gain, GainSource::Lqr);
        let k = dlqr(&cfg.system.a, &cfg.system.b, &cfg.system.q, &cfg.system.r).unwrap();
        assert_eq!(cfg.system.k, k);
    }

    #[test]
    fn bounds_are_derived_from_ranges_when_absent() {
        let mut v = minimal();
        v["precision"] = json!({ "ranges": { "state": [[-2.0, 2.0]], "input": [[-1.0, 1.0]] } });
        let cfg = RunConfig::from_json_str(&v.to_string()).unwrap();
        assert_eq!(cfg.errors, ErrorSource::Derived);
        assert!(cfg.scenario.error_lo > cfg.scenario.error_hi);
        assert!(cfg.scenario.error_hi > 0.0);

        v["precision"] = json!({});
        assert_eq!(paths(&v), vec!["precision.ranges"]);
        v["precision"] = json!({ "error_lo": 0.1 });
        assert_eq!(paths(&v), vec!["precision.error_hi"]);
    }

    #[test]
    fn reference_length_must_match_outputs() {
        let mut v = minimal();
        v["scenario"]["steps"][0]["reference"] = json!([1.0, 2.0]);
        assert_eq!(paths(&v), vec!["scenario.steps[0].reference"]);
    }

    #[test]
    fn malformed_json_is_a_syntax_error() {
        let err = RunConfig::from_json_str("{\"system\": ").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
        assert_eq!(err.diagnostics().len(), 1);
    }

    #[test]
    fn partial_metric_overrides_are_filled_in() {
        let mut v = minimal();
        v["scenario"]["metrics"] = json!({ "peak": 0.3 });
        let cfg = RunConfig::from_json_str(&v.to_string()).unwrap();
        let m = cfg.timing_metrics().unwrap();
        assert_eq!(m.peak, 0.3);
        let nominal = scenario_metrics(&cfg.system, &cfg.scenario).unwrap();
        assert_eq!((m.rise, m.settling), (nominal.rise, nominal.settling));
    }
}
