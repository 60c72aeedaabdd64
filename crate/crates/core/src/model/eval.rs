use nalgebra::DVector;

use super::{CostMode, ErrorMode, ModelOptions};
use crate::lti::{
    lqr_cost, lqr_cost_deviation, simulate_closed_loop, simulate_injected, BandSpan, BandViolation,
    Exact, LqrCost, LtiError, ReferencePlan, ScenarioSpec, SystemSpec, Trajectory,
};

/// Relative slack allowed on band rows.
pub(crate) const BAND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `z1`: modeled runtime over samples `1..=N`.
    pub runtime: f64,
    /// `z2`: LQR cost in the configured coordinates.
    pub cost: LqrCost,
    /// `w1 z1 + w2 z2`.
    pub total: f64,
}

struct Tube {
    clean: Trajectory,
    impulse: Vec<DVector<f64>>,
}

/// Evaluates schedules by running the error-injected recursion directly,
/// without going through the constraint matrix.
pub struct ScheduleEvaluator<'a> {
    sys: &'a SystemSpec,
    scen: &'a ScenarioSpec,
    plan: ReferencePlan,
    spans: Vec<BandSpan>,
    options: ModelOptions,
    tube: Option<Tube>,
}

impl<'a> ScheduleEvaluator<'a> {
    pub fn new(
        sys: &'a SystemSpec,
        scen: &'a ScenarioSpec,
        options: ModelOptions,
    ) -> Result<Self, LtiError> {
        let grid = sys.grid()?;
        let plan = ReferencePlan::new(sys, scen)?;
        let spans = scen.band_spans(grid);
        let tube = match options.error_mode {
            ErrorMode::Signed => None,
            ErrorMode::Symmetric => {
                let clean = simulate_closed_loop(sys, &plan, &Exact);
                let mut zero = sys.clone();
                zero.x0.fill(0.0);
                zero.u0.fill(0.0);
                let zero_plan = ReferencePlan::from_steps(
                    &zero,
                    &[(0.0, DVector::zeros(sys.outputs()))],
                    scen.horizon,
                )?;
                let mut unit = vec![0.0; plan.horizon() + 1];
                if unit.len() > 1 {
                    unit[1] = 1.0;
                }
                let resp = simulate_injected(&zero, &zero_plan, &unit);
                let impulse = resp.y.into_iter().skip(1).collect();
                Some(Tube { clean, impulse })
            }
        };
        Ok(Self {
            sys,
            scen,
            plan,
            spans,
            options,
            tube,
        })
    }

    pub fn horizon(&self) -> usize {
        self.plan.horizon()
    }

    pub fn plan(&self) -> &ReferencePlan {
        &self.plan
    }

    pub fn spans(&self) -> &[BandSpan] {
        &self.spans
    }

    /// `e_i = e_lo (1 - sw_i) + e_hi sw_i` for `i ≥ 1`, zero at sample 0.
    pub fn offsets(&self, sw: &[f64]) -> Vec<f64> {
        let (lo, hi) = (self.scen.error_lo, self.scen.error_hi);
        sw.iter()
            .enumerate()
            .map(|(i, &s)| if i == 0 { 0.0 } else { lo * (1.0 - s) + hi * s })
            .collect()
    }

    pub fn trajectory(&self, sw: &[f64]) -> Trajectory {
        assert_eq!(sw.len(), self.horizon() + 1, "switch vector length");
        simulate_injected(self.sys, &self.plan, &self.offsets(sw))
    }

    pub fn runtime(&self, sw: &[f64]) -> f64 {
        let (lo, hi) = (self.scen.runtime_lo, self.scen.runtime_hi);
        sw.iter().skip(1).map(|&s| hi * s + lo * (1.0 - s)).sum()
    }

    pub fn cost(&self, traj: &Trajectory) -> LqrCost {
        let res = match self.options.cost_mode {
            CostMode::Deviation => lqr_cost_deviation(traj, &self.plan, &self.sys.q, &self.sys.r),
            CostMode::Raw => lqr_cost(traj, &self.sys.q, &self.sys.r),
        };
        res.expect("weights validated with the system")
    }

    pub fn objective_of(&self, sw: &[f64], traj: &Trajectory) -> ObjectiveParts {
        let runtime = self.runtime(sw);
        let cost = self.cost(traj);
        ObjectiveParts {
            runtime,
            cost,
            total: self.options.w_runtime * runtime + self.options.w_cost * cost.value(),
        }
    }

    pub fn objective(&self, sw: &[f64]) -> ObjectiveParts {
        self.objective_of(sw, &self.trajectory(sw))
    }

    /// First band row violated beyond a relative slack of `1e-9`.
    pub fn band_violation(&self, sw: &[f64], traj: &Trajectory) -> Option<BandViolation> {
        let slack = |b: f64| BAND_TOL * b.abs().max(1.0);
        let errors = self.tube.as_ref().map(|_| self.offsets(sw));
        for span in &self.spans {
            for i in span.first..=span.last {
                for o in 0..self.sys.outputs() {
                    let (lo_val, hi_val, report) = match (&self.tube, &errors) {
                        (Some(tube), Some(e)) => {
                            let width: f64 =
                                (1..=i).map(|k| tube.impulse[i - k][o].abs() * e[k]).sum();
                            let y = tube.clean.y[i][o];
                            (y - width, y + width, y)
                        }
                        _ => {
                            let y = traj.y[i][o];
                            (y, y, y)
                        }
                    };
                    let ok = lo_val.is_finite()
                        && hi_val.is_finite()
                        && hi_val <= span.hi[o] + slack(span.hi[o])
                        && lo_val >= span.lo[o] - slack(span.lo[o]);
                    if !ok {
                        return Some(BandViolation {
                            step: span.step,
                            sample: i,
                            output: o,
                            value: report,
                            lo: span.lo[o],
                            hi: span.hi[o],
                        });
                    }
                }
            }
        }
        None
    }

    /// Largest amount by which any band row is exceeded, for diagnostics.
    pub fn worst_band_excess(&self, traj: &Trajectory) -> Option<BandViolation> {
        let mut worst: Option<(f64, BandViolation)> = None;
        for span in &self.spans {
            for i in span.first..=span.last {
                for (o, &y) in traj.y[i].iter().enumerate() {
                    let excess = if y.is_finite() {
                        (y - span.hi[o]).max(span.lo[o] - y)
                    } else {
                        f64::INFINITY
                    };
                    if excess > 0.0 && worst.as_ref().is_none_or(|(w, _)| excess > *w) {
                        worst = Some((
                            excess,
                            BandViolation {
                                step: span.step,
                                sample: i,
                                output: o,
                                value: y,
                                lo: span.lo[o],
                                hi: span.hi[o],
                            },
                        ));
                    }
                }
            }
        }
        worst.map(|(_, v)| v)
    }
}
