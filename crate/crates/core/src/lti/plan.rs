use nalgebra::{DMatrix, DVector};

use super::{LtiError, ScenarioSpec, SystemSpec, TimeGrid};

/// Steady state `(x_ss, u_ss)` with `C x_ss = γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub reference: DVector<f64>,
}

/// Which setpoint the controller tracks at each sample of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePlan {
    starts: Vec<usize>,
    setpoints: Vec<Setpoint>,
    horizon: usize,
}

impl ReferencePlan {
    pub fn new(sys: &SystemSpec, scen: &ScenarioSpec) -> Result<Self, LtiError> {
        let refs: Vec<(f64, DVector<f64>)> = scen
            .steps
            .iter()
            .map(|s| (s.time, s.reference.clone()))
            .collect();
        Self::from_steps(sys, &refs, scen.horizon)
    }

    pub fn from_steps(
        sys: &SystemSpec,
        steps: &[(f64, DVector<f64>)],
        horizon: f64,
    ) -> Result<Self, LtiError> {
        let grid = sys.grid()?;
        let mut starts = Vec::with_capacity(steps.len());
        let mut setpoints = Vec::with_capacity(steps.len());
        for (j, (t, gamma)) in steps.iter().enumerate() {
            starts.push(grid.ceil_samples(*t).max(0) as usize);
            setpoints.push(steady_state(sys, gamma, j)?);
        }
        if starts.is_empty() {
            return Err(LtiError::InvalidParameter {
                name: "steps",
                reason: "at least one step is required".into(),
            });
        }
        Ok(Self {
            starts,
            setpoints,
            horizon: grid.horizon_samples(horizon),
        })
    }

    /// Last sample index `N`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.starts.len()
    }

    pub fn start(&self, step: usize) -> usize {
        self.starts[step]
    }

    /// Index of the step whose reference is active at `sample`.
    pub fn step_at(&self, sample: usize) -> usize {
        self.starts
            .partition_point(|&s| s <= sample)
            .saturating_sub(1)
    }

    pub fn setpoint(&self, sample: usize) -> &Setpoint {
        &self.setpoints[self.step_at(sample)]
    }

    pub fn setpoint_of_step(&self, step: usize) -> &Setpoint {
        &self.setpoints[step]
    }
}

fn steady_state(sys: &SystemSpec, gamma: &DVector<f64>, step: usize) -> Result<Setpoint, LtiError> {
    let n = sys.states();
    let m = sys.inputs();
    let q = sys.outputs();
    let mut mat = DMatrix::zeros(n + q, n + m);
    mat.view_mut((0, 0), (n, n))
        .copy_from(&(&sys.a - DMatrix::identity(n, n)));
    mat.view_mut((0, n), (n, m)).copy_from(&sys.b);
    mat.view_mut((n, 0), (q, n)).copy_from(&sys.c);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(n, q).copy_from(gamma);
    let svd = mat.clone().svd(true, true);
    let tol = f64::EPSILON * (n + m).max(n + q) as f64 * svd.singular_values.max();
    let sol = svd.solve(&rhs, tol).map_err(|_| LtiError::Untrackable {
        step,
        residual: f64::INFINITY,
    })?;
    let residual = (&mat * &sol - &rhs).amax();
    let scale = rhs.amax().max(1.0) * mat.amax().max(1.0);
    if !residual.is_finite() || residual > 1e-9 * scale {
        return Err(LtiError::Untrackable { step, residual });
    }
    Ok(Setpoint {
        x: sol.rows(0, n).into_owned(),
        u: sol.rows(n, m).into_owned(),
        reference: gamma.clone(),
    })
}

/// Samples `first..=last` where outputs of step `step` must lie in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpan {
    pub step: usize,
    pub first: usize,
    pub last: usize,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BandSpan {
    pub fn contains(&self, sample: usize) -> bool {
        (self.first..=self.last).contains(&sample)
    }
}

impl ScenarioSpec {
    /// Constrained spans `⌈(t_j+T_s)/h⌉ ≤ i ≤ ⌈t_{j+1}/h⌉` with `t_{r+1} = T`.
    /// Empty spans are omitted.
    pub fn band_spans(&self, grid: TimeGrid) -> Vec<BandSpan> {
        let n = grid.horizon_samples(self.horizon) as i64;
        let mut spans = Vec::new();
        for (j, step) in self.steps.iter().enumerate() {
            let end_time = self.steps.get(j + 1).map_or(self.horizon, |s| s.time);
            let first = grid.ceil_samples(step.time + self.settling_time).max(0);
            let last = grid.ceil_samples(end_time).min(n);
            if first > last {
                continue;
            }
            let delta = self.band_half_width(j);
            spans.push(BandSpan {
                step: j,
                first: first as usize,
                last: last as usize,
                lo: &step.reference - &delta,
                hi: &step.reference + &delta,
            });
        }
        spans
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{Band, Step};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn steady_state_of_first_order_plant() {
        let sys =
            SystemSpec::new(scalar(0.5), scalar(1.0), scalar(2.0), scalar(-0.1), 1.0).unwrap();
        let plan =
            ReferencePlan::from_steps(&sys, &[(0.0, DVector::from_element(1, 4.0))], 5.0).unwrap();
        let sp = plan.setpoint(3);
        assert_relative_eq!(sp.x[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sp.u[0], 1.0, epsilon = 1e-12);
        assert_eq!(plan.horizon(), 5);
    }

    #[test]
    fn stable_plant_without_input_is_untrackable() {
        let sys = SystemSpec::new(scalar(0.5), scalar(0.0), scalar(1.0), scalar(0.0), 1.0).unwrap();
        let err = ReferencePlan::from_steps(
            &sys,
            &[
                (0.0, DVector::from_element(1, 0.0)),
                (1.0, DVector::from_element(1, 1.0)),
            ],
            3.0,
        )
        .unwrap_err();
        assert!(matches!(err, LtiError::Untrackable { step: 1, .. }));
    }

    #[test]
    fn active_step_switches_on_ceiling_sample() {
        let sys =
            SystemSpec::new(scalar(0.5), scalar(1.0), scalar(1.0), scalar(0.0), 0.01).unwrap();
        let plan = ReferencePlan::from_steps(
            &sys,
            &[
                (0.0, DVector::from_element(1, 1.0)),
                (1.8, DVector::from_element(1, 2.0)),
            ],
            3.0,
        )
        .unwrap();
        assert_eq!(plan.step_at(179), 0);
        assert_eq!(plan.step_at(180), 1);
        assert_eq!(plan.step_at(300), 1);
    }

    #[test]
    fn band_spans_follow_step_instants() {
        let scen = ScenarioSpec {
            steps: vec![
                Step::scalar(0.0, 35.0),
                Step::scalar(1.8, 25.0),
                Step::scalar(3.5, 15.0),
                Step::scalar(5.5, 20.0),
            ],
            band: Band::Percent(5.0),
            settling_time: 1.2,
            horizon: 8.0,
            runtime_lo: 1.0,
            runtime_hi: 2.0,
            error_lo: 0.0,
            error_hi: 0.0,
        };
        let spans = scen.band_spans(TimeGrid::new(0.01).unwrap());
        let ranges: Vec<_> = spans.iter().map(|s| (s.first, s.last)).collect();
        assert_eq!(ranges, vec![(120, 180), (300, 350), (470, 550), (670, 800)]);
        assert_relative_eq!(spans[0].lo[0], 33.25);
        assert_relative_eq!(spans[0].hi[0], 36.75);
    }
}
