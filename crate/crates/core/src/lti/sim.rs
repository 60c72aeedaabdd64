use nalgebra::DVector;

use super::{LtiError, ReferencePlan, ScenarioSpec, SystemSpec};

/// Closed-loop trajectory over samples `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// Set when any entry is NaN or infinite.
    pub non_finite: bool,
}

impl Trajectory {
    /// Last sample index `N`.
    pub fn horizon(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Bitwise equality, so `NaN` entries compare equal to themselves.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let same = |a: &[DVector<f64>], b: &[DVector<f64>]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(p, q)| {
                    p.len() == q.len()
                        && p.iter()
                            .zip(q.iter())
                            .all(|(s, t)| s.to_bits() == t.to_bits())
                })
        };
        same(&self.x, &other.x) && same(&self.u, &other.u) && same(&self.y, &other.y)
    }
}

/// Per-sample arithmetic of the closed-loop recursion.
///
/// `round` is applied to every loaded operand and every intermediate result.
/// `injection` is added once to each component of `x`, `u` and `y`.
pub trait Arithmetic {
    fn round(&self, sample: usize, v: f64) -> f64;

    fn injection(&self, _sample: usize) -> f64 {
        0.0
    }
}

/// Native binary64 arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl Arithmetic for Exact {
    #[inline]
    fn round(&self, _sample: usize, v: f64) -> f64 {
        v
    }
}

/// Binary64 arithmetic with an additive per-sample offset.
#[derive(Debug, Clone, Copy)]
pub struct Injected<'a> {
    pub offsets: &'a [f64],
}

impl Arithmetic for Injected<'_> {
    #[inline]
    fn round(&self, _sample: usize, v: f64) -> f64 {
        v
    }

    #[inline]
    fn injection(&self, sample: usize) -> f64 {
        self.offsets.get(sample).copied().unwrap_or(0.0)
    }
}

/// Runs the recursion over `0..=plan.horizon()`.
///
/// Dot products accumulate left to right, controller row first, then plant,
/// then output.
pub fn simulate_closed_loop<Ar: Arithmetic + ?Sized>(
    sys: &SystemSpec,
    plan: &ReferencePlan,
    ar: &Ar,
) -> Trajectory {
    let n = sys.states();
    let m = sys.inputs();
    let q = sys.outputs();
    let horizon = plan.horizon();
    let mut x = Vec::with_capacity(horizon + 1);
    let mut u = Vec::with_capacity(horizon + 1);
    let mut y = Vec::with_capacity(horizon + 1);

    let x0 = sys.x0.map(|v| ar.round(0, v));
    let u0 = sys.u0.map(|v| ar.round(0, v));
    y.push(output(sys, &x0, 0, ar));
    x.push(x0);
    u.push(u0);

    for i in 1..=horizon {
        let r = |v: f64| ar.round(i, v);
        let e = ar.injection(i);
        let sp = plan.setpoint(i);
        let x_prev = &x[i - 1];
        let u_prev = &u[i - 1];

        let mut ui = DVector::zeros(m);
        for row in 0..m {
            let mut acc = 0.0;
            for col in 0..n {
                let d = r(r(x_prev[col]) - r(sp.x[col]));
                acc = r(acc + r(r(sys.k[(row, col)]) * d));
            }
            ui[row] = r(r(sp.u[row]) + acc) + e;
        }

        let mut xi = DVector::zeros(n);
        for row in 0..n {
            let mut acc = 0.0;
            for col in 0..n {
                acc = r(acc + r(r(sys.a[(row, col)]) * r(x_prev[col])));
            }
            for col in 0..m {
                acc = r(acc + r(r(sys.b[(row, col)]) * r(u_prev[col])));
            }
            xi[row] = acc + e;
        }

        let yi = output(sys, &xi, i, ar);
        debug_assert_eq!(yi.len(), q);
        x.push(xi);
        u.push(ui);
        y.push(yi);
    }

    let non_finite = x
        .iter()
        .chain(u.iter())
        .chain(y.iter())
        .any(|v| v.iter().any(|s| !s.is_finite()));
    Trajectory {
        x,
        u,
        y,
        non_finite,
    }
}

fn output<Ar: Arithmetic + ?Sized>(
    sys: &SystemSpec,
    x: &DVector<f64>,
    i: usize,
    ar: &Ar,
) -> DVector<f64> {
    let e = ar.injection(i);
    let mut y = DVector::zeros(sys.outputs());
    for row in 0..sys.outputs() {
        let mut acc = 0.0;
        for col in 0..sys.states() {
            acc = ar.round(
                i,
                acc + ar.round(i, ar.round(i, sys.c[(row, col)]) * ar.round(i, x[col])),
            );
        }
        y[row] = acc + e;
    }
    y
}

pub fn simulate_nominal(sys: &SystemSpec, scen: &ScenarioSpec) -> Result<Trajectory, LtiError> {
    let plan = ReferencePlan::new(sys, scen)?;
    Ok(simulate_closed_loop(sys, &plan, &Exact))
}

/// Exact recursion with `offsets[i]` added to `x_i`, `u_i` and `y_i` for `i ≥ 1`.
pub fn simulate_injected(sys: &SystemSpec, plan: &ReferencePlan, offsets: &[f64]) -> Trajectory {
    let mut padded;
    let offsets = if offsets.first().is_some_and(|e| *e != 0.0) {
        padded = offsets.to_vec();
        padded[0] = 0.0;
        &padded[..]
    } else {
        offsets
    };
    simulate_closed_loop(sys, plan, &Injected { offsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{Band, Step};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scenario(gamma: f64, horizon: f64) -> ScenarioSpec {
        ScenarioSpec {
            steps: vec![Step::scalar(0.0, gamma)],
            band: Band::Absolute(0.1),
            settling_time: 1.0,
            horizon,
            runtime_lo: 1.0,
            runtime_hi: 2.0,
            error_lo: 0.0,
            error_hi: 0.0,
        }
    }

    #[test]
    fn zero_fixed_point_stays_zero() {
        let sys = SystemSpec::new(scalar(1.0), scalar(0.0), scalar(1.0), scalar(0.0), 1.0).unwrap();
        let traj = simulate_nominal(&sys, &scenario(0.0, 10.0)).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.y.iter().all(|y| y[0] == 0.0));
        assert!(!traj.non_finite);
    }

    #[test]
    fn geometric_decay() {
        let sys = SystemSpec::new(scalar(0.5), scalar(0.0), scalar(1.0), scalar(0.0), 1.0)
            .unwrap()
            .with_initial(DVector::from_element(1, 1.0), DVector::zeros(1))
            .unwrap();
        let traj = simulate_nominal(&sys, &scenario(0.0, 20.0)).unwrap();
        for (k, y) in traj.y.iter().enumerate() {
            assert_eq!(y[0], 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn control_uses_previous_state() {
        // x1 = x0 + u0 = 1, u1 = K (x0 - x_ss) = 0, u2 = K (x1 - x_ss) = -1
        let sys = SystemSpec::new(scalar(1.0), scalar(1.0), scalar(1.0), scalar(-1.0), 1.0)
            .unwrap()
            .with_initial(DVector::zeros(1), DVector::from_element(1, 1.0))
            .unwrap();
        let traj = simulate_nominal(&sys, &scenario(0.0, 3.0)).unwrap();
        assert_eq!(traj.x[1][0], 1.0);
        assert_eq!(traj.u[1][0], 0.0);
        assert_eq!(traj.u[2][0], -1.0);
        assert_eq!(traj.x[2][0], 1.0);
        assert_eq!(traj.x[3][0], 0.0);
    }

    #[test]
    fn injection_enters_state_input_and_output() {
        let sys = SystemSpec::new(scalar(0.0), scalar(0.0), scalar(1.0), scalar(0.0), 1.0).unwrap();
        let plan = ReferencePlan::new(&sys, &scenario(0.0, 2.0)).unwrap();
        let traj = simulate_injected(&sys, &plan, &[9.0, 0.25, 0.5]);
        assert_eq!(traj.x[0][0], 0.0);
        assert_eq!(traj.x[1][0], 0.25);
        assert_eq!(traj.u[1][0], 0.25);
        assert_eq!(traj.y[1][0], 0.5);
        assert_eq!(traj.y[2][0], 1.0);
    }

    #[test]
    fn non_finite_values_are_flagged() {
        let sys = SystemSpec::new(scalar(1e300), scalar(0.0), scalar(1.0), scalar(0.0), 1.0)
            .unwrap()
            .with_initial(DVector::from_element(1, 1e300), DVector::zeros(1))
            .unwrap();
        let traj = simulate_nominal(&sys, &scenario(0.0, 3.0)).unwrap();
        assert!(traj.non_finite);
        assert_eq!(traj.len(), 4);
        assert!(traj.x[1][0].is_infinite());
    }

    #[test]
    fn tracking_reaches_setpoint() {
        let sys =
            SystemSpec::new(scalar(0.9), scalar(0.1), scalar(1.0), scalar(-2.0), 0.1).unwrap();
        let traj = simulate_nominal(&sys, &scenario(3.0, 20.0)).unwrap();
        assert_relative_eq!(traj.y.last().unwrap()[0], 3.0, epsilon = 1e-9);
    }
}
