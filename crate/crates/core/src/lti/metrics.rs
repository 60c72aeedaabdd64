use nalgebra::{DMatrix, DVector};

use super::{
    shape_of, simulate_closed_loop, Exact, LtiError, ReferencePlan, ScenarioSpec, SystemSpec,
    TimeGrid, Trajectory,
};

/// Finite-horizon LQR cost, tagged when a term was NaN or infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LqrCost {
    Finite(f64),
    NonFinite(f64),
}

impl LqrCost {
    pub fn value(&self) -> f64 {
        match *self {
            LqrCost::Finite(v) | LqrCost::NonFinite(v) => v,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, LqrCost::Finite(_))
    }
}

impl std::fmt::Display for LqrCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LqrCost::Finite(v) => write!(f, "{v}"),
            LqrCost::NonFinite(v) if v.is_nan() => write!(f, "NaN"),
            LqrCost::NonFinite(v) => write!(f, "{v}"),
        }
    }
}

/// `Σ_{k=0..N} x_kᵀ Q x_k + u_kᵀ R u_k` in raw coordinates.
pub fn lqr_cost(
    traj: &Trajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrCost, LtiError> {
    check_weights(traj, q, r)?;
    Ok(accumulate(traj, q, r, |_| None))
}

/// LQR cost of the deviation from the setpoint active at each sample.
pub fn lqr_cost_deviation(
    traj: &Trajectory,
    plan: &ReferencePlan,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrCost, LtiError> {
    check_weights(traj, q, r)?;
    Ok(accumulate(traj, q, r, |k| {
        let sp = plan.setpoint(k);
        Some((&sp.x, &sp.u))
    }))
}

fn check_weights(traj: &Trajectory, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), LtiError> {
    let n = traj.x.first().map_or(q.nrows(), |x| x.len());
    let m = traj.u.first().map_or(r.nrows(), |u| u.len());
    if q.shape() != (n, n) {
        return Err(LtiError::Dimension {
            what: "Q",
            expected: shape_of(n, n),
            found: shape_of(q.nrows(), q.ncols()),
        });
    }
    if r.shape() != (m, m) {
        return Err(LtiError::Dimension {
            what: "R",
            expected: shape_of(m, m),
            found: shape_of(r.nrows(), r.ncols()),
        });
    }
    Ok(())
}

/// Per-sample LQR terms; deviation from the active setpoint when a plan is
/// given, raw coordinates otherwise.
pub fn stage_costs(
    traj: &Trajectory,
    plan: Option<&ReferencePlan>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Vec<f64>, LtiError> {
    check_weights(traj, q, r)?;
    Ok((0..traj.len())
        .map(|k| {
            stage(
                traj,
                k,
                q,
                r,
                plan.map(|p| {
                    let sp = p.setpoint(k);
                    (&sp.x, &sp.u)
                }),
            )
        })
        .collect())
}

fn stage(
    traj: &Trajectory,
    k: usize,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    offset: Option<(&DVector<f64>, &DVector<f64>)>,
) -> f64 {
    let (x, u) = (&traj.x[k], &traj.u[k]);
    let (dx, du) = match offset {
        Some((xs, us)) => (x - xs, u - us),
        None => (x.clone(), u.clone()),
    };
    q.quadform_scalar(&dx) + r.quadform_scalar(&du)
}

fn accumulate<'a>(
    traj: &Trajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    offset: impl Fn(usize) -> Option<(&'a DVector<f64>, &'a DVector<f64>)>,
) -> LqrCost {
    let mut total = 0.0;
    let mut finite = true;
    for k in 0..traj.len() {
        let term = stage(traj, k, q, r, offset(k));
        finite &= term.is_finite();
        total += term;
    }
    if finite && total.is_finite() {
        LqrCost::Finite(total)
    } else {
        LqrCost::NonFinite(total)
    }
}

trait QuadForm {
    fn quadform_scalar(&self, v: &DVector<f64>) -> f64;
}

impl QuadForm for DMatrix<f64> {
    fn quadform_scalar(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(self * v))
    }
}

/// Rise, peak and settling time of a step response, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingMetrics {
    pub rise: f64,
    pub peak: f64,
    pub settling: f64,
}

impl TimingMetrics {
    pub fn new(rise: f64, peak: f64, settling: f64) -> Self {
        Self {
            rise,
            peak,
            settling,
        }
    }
}

/// Step-response metrics of the nominal loop from `x0` toward `reference`.
///
/// Rise time is the first sample reaching 90% of the step from `y_0`. Peak
/// time is the first local overshoot maximum, or the first band entry if the
/// response never overshoots. With several outputs the slowest is reported.
pub fn time_domain_metrics(
    sys: &SystemSpec,
    reference: &DVector<f64>,
    half_width: &DVector<f64>,
    horizon: f64,
) -> Result<TimingMetrics, LtiError> {
    if reference.len() != sys.outputs() || half_width.len() != sys.outputs() {
        return Err(LtiError::Dimension {
            what: "reference",
            expected: sys.outputs().to_string(),
            found: reference.len().to_string(),
        });
    }
    let grid = sys.grid()?;
    let plan = ReferencePlan::from_steps(sys, &[(0.0, reference.clone())], horizon)?;
    let traj = simulate_closed_loop(sys, &plan, &Exact);
    let mut out = TimingMetrics::new(0.0, 0.0, 0.0);
    for c in 0..sys.outputs() {
        let ys: Vec<f64> = traj.y.iter().map(|y| y[c]).collect();
        let m = output_metrics(&ys, reference[c], half_width[c], grid, horizon)?;
        out.rise = out.rise.max(m.rise);
        out.peak = out.peak.max(m.peak);
        out.settling = out.settling.max(m.settling);
    }
    out.peak = out.peak.min(out.settling);
    Ok(out)
}

fn output_metrics(
    ys: &[f64],
    gamma: f64,
    delta: f64,
    grid: TimeGrid,
    horizon: f64,
) -> Result<TimingMetrics, LtiError> {
    let inside = |y: f64| y.is_finite() && (y - gamma).abs() <= delta;
    let settle_idx = match ys.iter().rposition(|&y| !inside(y)) {
        None => 0,
        Some(last) if last + 1 < ys.len() => last + 1,
        Some(_) => return Err(LtiError::Unsettled { horizon }),
    };
    let settling = grid.time_of(settle_idx);

    let y0 = ys[0];
    let span = gamma - y0;
    let dir = span.signum();
    let rise = if span == 0.0 {
        0.0
    } else {
        ys.iter()
            .position(|&y| dir * (y - y0) >= 0.9 * span.abs())
            .map_or(settling, |k| grid.time_of(k))
    };

    let excess: Vec<f64> = ys.iter().map(|&y| dir * (y - gamma)).collect();
    let overshoot_peak = (1..excess.len())
        .find(|&k| excess[k] > 0.0 && excess.get(k + 1).is_none_or(|next| *next <= excess[k]));
    let peak = match overshoot_peak {
        Some(k) if span != 0.0 => grid.time_of(k),
        _ => ys
            .iter()
            .position(|&y| inside(y))
            .map_or(settling, |k| grid.time_of(k)),
    };
    Ok(TimingMetrics::new(rise, peak.min(settling), settling))
}

/// First band violation found by [`check_settling`].
#[derive(Debug, Clone, PartialEq)]
pub struct BandViolation {
    pub step: usize,
    pub sample: usize,
    pub output: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl std::fmt::Display for BandViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {} sample {} output {}: y = {} outside [{}, {}]",
            self.step, self.sample, self.output, self.value, self.lo, self.hi
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlingReport {
    pub violation: Option<BandViolation>,
    pub checked_samples: usize,
}

impl SettlingReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks every constrained sample of every step; non-finite outputs fail.
pub fn check_settling(traj: &Trajectory, scen: &ScenarioSpec, grid: TimeGrid) -> SettlingReport {
    let mut checked = 0;
    for span in scen.band_spans(grid) {
        for i in span.first..=span.last.min(traj.horizon()) {
            checked += 1;
            for (c, &v) in traj.y[i].iter().enumerate() {
                let ok = v.is_finite() && v >= span.lo[c] && v <= span.hi[c];
                if !ok {
                    return SettlingReport {
                        violation: Some(BandViolation {
                            step: span.step,
                            sample: i,
                            output: c,
                            value: v,
                            lo: span.lo[c],
                            hi: span.hi[c],
                        }),
                        checked_samples: checked,
                    };
                }
            }
        }
    }
    SettlingReport {
        violation: None,
        checked_samples: checked,
    }
}
