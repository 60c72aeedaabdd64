use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Constraint, MiqpProblem, ModelError, RowRole, Sense, VarId, VarKind};
use crate::intervals::{validate_windows, SwitchingWindows, WindowDiagnostic};
use crate::lti::{
    simulate_closed_loop, simulate_injected, Exact, ReferencePlan, ScenarioSpec, SystemSpec,
};

/// Coordinates of the LQR cost term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// `(x - x_ss, u - u_ss)` of the active setpoint.
    #[default]
    Deviation,
    /// `(x, u)` as simulated.
    Raw,
}

/// How the per-sample error bound enters the band constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// `+e_i` is injected into the recursion.
    #[default]
    Signed,
    /// The band must hold for every error sequence with `|ε_k| ≤ e_k`.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub w_runtime: f64,
    pub w_cost: f64,
    pub cost_mode: CostMode,
    pub error_mode: ErrorMode,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            w_runtime: 1.0,
            w_cost: 1.0,
            cost_mode: CostMode::Deviation,
            error_mode: ErrorMode::Signed,
        }
    }
}

/// Adds `χ` with `χ ≥ a-b`, `χ ≥ b-a`, `χ ≤ 2-(a+b)`, `χ ≤ a+b`.
pub fn encode_xor(p: &mut MiqpProblem, a: VarId, b: VarId, sample: usize) -> VarId {
    let chi = p.add_variable(VarKind::Xor(sample), true, 0.0, 1.0);
    let role = RowRole::Xor { sample };
    let rows = [
        (vec![(chi, 1.0), (a, -1.0), (b, 1.0)], Sense::Ge, 0.0),
        (vec![(chi, 1.0), (a, 1.0), (b, -1.0)], Sense::Ge, 0.0),
        (vec![(chi, 1.0), (a, 1.0), (b, 1.0)], Sense::Le, 2.0),
        (vec![(chi, 1.0), (a, -1.0), (b, -1.0)], Sense::Le, 0.0),
    ];
    for (terms, sense, rhs) in rows {
        p.add_constraint(Constraint {
            terms,
            sense,
            rhs,
            role,
            defines: None,
        });
    }
    chi
}

struct Layout {
    sw: Vec<VarId>,
    e: Vec<Option<VarId>>,
    x: Vec<Vec<VarId>>,
    u: Vec<Vec<VarId>>,
    y: Vec<Vec<VarId>>,
}

/// Encodes the scheduling problem over samples `0..=N`.
pub fn build_schedule_program(
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    windows: &SwitchingWindows,
    options: &ModelOptions,
) -> Result<MiqpProblem, ModelError> {
    let grid = sys.grid()?;
    let plan = ReferencePlan::new(sys, scen)?;
    let horizon = plan.horizon();
    let mut diags = validate_windows(windows, horizon);
    if let Some(&(_, upper)) = windows.windows.last() {
        if upper > horizon && diags.is_empty() {
            diags.push(WindowDiagnostic::OutOfRange {
                beta: windows.mu(),
                upper,
                horizon,
            });
        }
    }
    if !diags.is_empty() {
        return Err(ModelError::Windows(diags));
    }
    let (n, m, q) = (sys.states(), sys.inputs(), sys.outputs());

    let mut p = MiqpProblem {
        horizon,
        windows: windows.windows.clone(),
        ..Default::default()
    };
    let mut lay = Layout {
        sw: vec![],
        e: vec![],
        x: vec![],
        u: vec![],
        y: vec![],
    };
    for i in 0..=horizon {
        lay.sw
            .push(p.add_variable(VarKind::Switch(i), true, 0.0, 1.0));
        lay.e.push(
            (i > 0).then(|| {
                p.add_variable(VarKind::Error(i), false, f64::NEG_INFINITY, f64::INFINITY)
            }),
        );
        let free = |p: &mut MiqpProblem, kind| {
            p.add_variable(kind, false, f64::NEG_INFINITY, f64::INFINITY)
        };
        lay.x
            .push((0..n).map(|c| free(&mut p, VarKind::State(i, c))).collect());
        lay.u
            .push((0..m).map(|c| free(&mut p, VarKind::Input(i, c))).collect());
        lay.y.push(
            (0..q)
                .map(|c| free(&mut p, VarKind::Output(i, c)))
                .collect(),
        );
    }

    let define = |p: &mut MiqpProblem, var: VarId, mut terms: Vec<(VarId, f64)>, rhs: f64| {
        terms.insert(0, (var, 1.0));
        terms.retain(|&(_, c)| c != 0.0);
        p.add_constraint(Constraint {
            terms,
            sense: Sense::Eq,
            rhs,
            role: RowRole::Definition,
            defines: Some(var),
        });
    };

    // Sample 0 carries the initial condition.
    for c in 0..n {
        define(&mut p, lay.x[0][c], vec![], sys.x0[c]);
    }
    for c in 0..m {
        define(&mut p, lay.u[0][c], vec![], sys.u0[c]);
    }
    for o in 0..q {
        let terms = (0..n).map(|c| (lay.x[0][c], -sys.c[(o, c)])).collect();
        define(&mut p, lay.y[0][o], terms, 0.0);
    }

    for i in 1..=horizon {
        let e = lay.e[i].unwrap();
        define(
            &mut p,
            e,
            vec![(lay.sw[i], -(scen.error_hi - scen.error_lo))],
            scen.error_lo,
        );
        let sp = plan.setpoint(i);
        let kxs = &sys.k * &sp.x;
        for r in 0..m {
            let mut terms: Vec<(VarId, f64)> =
                (0..n).map(|c| (lay.x[i - 1][c], -sys.k[(r, c)])).collect();
            terms.push((e, -1.0));
            define(&mut p, lay.u[i][r], terms, sp.u[r] - kxs[r]);
        }
        for r in 0..n {
            let mut terms: Vec<(VarId, f64)> =
                (0..n).map(|c| (lay.x[i - 1][c], -sys.a[(r, c)])).collect();
            terms.extend((0..m).map(|c| (lay.u[i - 1][c], -sys.b[(r, c)])));
            terms.push((e, -1.0));
            define(&mut p, lay.x[i][r], terms, 0.0);
        }
        for o in 0..q {
            let mut terms: Vec<(VarId, f64)> =
                (0..n).map(|c| (lay.x[i][c], -sys.c[(o, c)])).collect();
            terms.push((e, -1.0));
            define(&mut p, lay.y[i][o], terms, 0.0);
        }
    }

    let spans = scen.band_spans(grid);
    match options.error_mode {
        ErrorMode::Signed => {
            for span in &spans {
                for i in span.first..=span.last {
                    for o in 0..q {
                        let role = RowRole::Band {
                            step: span.step,
                            sample: i,
                            output: o,
                        };
                        for (sense, rhs) in [(Sense::Le, span.hi[o]), (Sense::Ge, span.lo[o])] {
                            p.add_constraint(Constraint {
                                terms: vec![(lay.y[i][o], 1.0)],
                                sense,
                                rhs,
                                role,
                                defines: None,
                            });
                        }
                    }
                }
            }
        }
        ErrorMode::Symmetric => add_tube_rows(&mut p, sys, scen, &plan, &lay, &spans),
    }

    let first_window = windows.windows.first().map_or(horizon + 1, |w| w.0);
    for i in 0..first_window.min(horizon + 1) {
        p.add_constraint(Constraint {
            terms: vec![(lay.sw[i], 1.0)],
            sense: Sense::Eq,
            rhs: 1.0,
            role: RowRole::InitialHi { sample: i },
            defines: None,
        });
    }
    for (beta, &(lower, upper)) in windows.windows.iter().enumerate() {
        let chis: Vec<VarId> = (lower..=upper)
            .map(|i| encode_xor(&mut p, lay.sw[i], lay.sw[i - 1], i))
            .collect();
        p.add_constraint(Constraint {
            terms: chis.iter().map(|&c| (c, 1.0)).collect(),
            sense: Sense::Le,
            rhs: 1.0,
            role: RowRole::WindowBudget { window: beta },
            defines: None,
        });
        let next = windows.windows.get(beta + 1).map_or(horizon + 1, |w| w.0);
        for i in upper + 1..next {
            p.add_constraint(Constraint {
                terms: vec![(lay.sw[i], 1.0), (lay.sw[upper], -1.0)],
                sense: Sense::Eq,
                rhs: 0.0,
                role: RowRole::Freeze {
                    sample: i,
                    anchor: upper,
                },
                defines: None,
            });
        }
    }

    let w1 = options.w_runtime;
    let dt = scen.runtime_hi - scen.runtime_lo;
    p.objective.constant += w1 * horizon as f64 * scen.runtime_lo;
    if dt != 0.0 && w1 != 0.0 {
        for i in 1..=horizon {
            p.objective.linear.push((lay.sw[i], w1 * dt));
        }
    }
    let w2 = options.w_cost;
    if w2 != 0.0 {
        for i in 0..=horizon {
            let sp = plan.setpoint(i);
            let (xs, us) = match options.cost_mode {
                CostMode::Deviation => (sp.x.clone(), sp.u.clone()),
                CostMode::Raw => (DVector::zeros(n), DVector::zeros(m)),
            };
            add_quadratic(&mut p, &lay.x[i], &sys.q, &xs, w2);
            add_quadratic(&mut p, &lay.u[i], &sys.r, &us, w2);
        }
    }
    Ok(p)
}

/// Adds `w (v - c)ᵀ W (v - c)`.
fn add_quadratic(
    p: &mut MiqpProblem,
    vars: &[VarId],
    weight: &nalgebra::DMatrix<f64>,
    center: &DVector<f64>,
    w: f64,
) {
    let wc = weight * center;
    for a in 0..vars.len() {
        for b in 0..vars.len() {
            let q = weight[(a, b)];
            if q != 0.0 {
                p.objective.quadratic.push((vars[a], vars[b], w * q));
            }
        }
        if wc[a] != 0.0 {
            p.objective.linear.push((vars[a], -2.0 * w * wc[a]));
        }
    }
    p.objective.constant += w * center.dot(&wc);
}

/// Rows `Σ_k |g_{i-k}| e_k ≤ min(hi - ŷ_i, ŷ_i - lo)` where `ŷ` is the
/// error-free output and `g` the output response to a unit injection.
fn add_tube_rows(
    p: &mut MiqpProblem,
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    plan: &ReferencePlan,
    lay: &Layout,
    spans: &[crate::lti::BandSpan],
) {
    let horizon = plan.horizon();
    let clean = simulate_closed_loop(sys, plan, &Exact);
    let mut zero = sys.clone();
    zero.x0.fill(0.0);
    zero.u0.fill(0.0);
    let zero_plan =
        ReferencePlan::from_steps(&zero, &[(0.0, DVector::zeros(sys.outputs()))], scen.horizon)
            .expect("zero reference is always trackable");
    let mut unit = vec![0.0; horizon + 1];
    if horizon >= 1 {
        unit[1] = 1.0;
    }
    // Response at lag d to an injection d samples earlier.
    let impulse = simulate_injected(&zero, &zero_plan, &unit);
    let gain = |lag: usize, o: usize| impulse.y[lag + 1][o].abs();
    let de = scen.error_hi - scen.error_lo;
    for span in spans {
        for i in span.first..=span.last {
            for o in 0..sys.outputs() {
                let mut terms = Vec::with_capacity(i);
                let mut base = 0.0;
                for k in 1..=i {
                    let g = gain(i - k, o);
                    base += g * scen.error_lo;
                    if g * de != 0.0 {
                        terms.push((lay.sw[k], g * de));
                    }
                }
                let role = RowRole::Tube {
                    step: span.step,
                    sample: i,
                    output: o,
                };
                let y = clean.y[i][o];
                for room in [span.hi[o] - y, y - span.lo[o]] {
                    p.add_constraint(Constraint {
                        terms: terms.clone(),
                        sense: Sense::Le,
                        rhs: room - base,
                        role,
                        defines: None,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{Band, Step};
    use nalgebra::DMatrix;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn small() -> (SystemSpec, ScenarioSpec) {
        let sys =
            SystemSpec::new(scalar(0.5), scalar(1.0), scalar(1.0), scalar(-0.2), 1.0).unwrap();
        let scen = ScenarioSpec {
            steps: vec![Step::scalar(0.0, 1.0)],
            band: Band::Absolute(10.0),
            settling_time: 2.0,
            horizon: 4.0,
            runtime_lo: 1.0,
            runtime_hi: 2.0,
            error_lo: 0.1,
            error_hi: 0.01,
        };
        (sys, scen)
    }

    #[test]
    fn xor_gadget_is_exact_at_binary_points() {
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                let mut p = MiqpProblem::default();
                let va = p.add_variable(VarKind::Other(0), true, 0.0, 1.0);
                let vb = p.add_variable(VarKind::Other(1), true, 0.0, 1.0);
                let chi = encode_xor(&mut p, va, vb, 0);
                let feasible: Vec<f64> = [0.0, 1.0]
                    .into_iter()
                    .filter(|&c| {
                        let mut vals = vec![0.0; 3];
                        vals[va] = a;
                        vals[vb] = b;
                        vals[chi] = c;
                        p.max_violation(&vals) == 0.0
                    })
                    .collect();
                let expected = if a != b { 1.0 } else { 0.0 };
                assert_eq!(feasible, vec![expected], "a={a} b={b}");
                // The continuous range of χ also collapses to one point.
                let lo = p
                    .constraints
                    .iter()
                    .filter(|c| c.sense == Sense::Ge)
                    .map(|c| {
                        c.rhs
                            - c.terms
                                .iter()
                                .filter(|t| t.0 != chi)
                                .map(|&(v, k)| k * if v == va { a } else { b })
                                .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let hi = p
                    .constraints
                    .iter()
                    .filter(|c| c.sense == Sense::Le)
                    .map(|c| {
                        c.rhs
                            - c.terms
                                .iter()
                                .filter(|t| t.0 != chi)
                                .map(|&(v, k)| k * if v == va { a } else { b })
                                .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!((lo, hi), (expected, expected));
            }
        }
    }

    #[test]
    fn constraint_counts_for_one_window() {
        let (sys, scen) = small();
        let windows = SwitchingWindows::new(vec![(1, 2)]);
        let p = build_schedule_program(&sys, &scen, &windows, &ModelOptions::default()).unwrap();
        let sw = p
            .variables
            .iter()
            .filter(|v| matches!(v.kind, VarKind::Switch(_)))
            .count();
        let chi = p
            .variables
            .iter()
            .filter(|v| matches!(v.kind, VarKind::Xor(_)))
            .count();
        assert_eq!(sw, 5);
        assert_eq!(chi, 2);
        assert_eq!(p.count_rows(|r| matches!(r, RowRole::InitialHi { .. })), 1);
        assert_eq!(p.count_rows(|r| matches!(r, RowRole::Xor { .. })), 8);
        assert_eq!(
            p.count_rows(|r| matches!(r, RowRole::WindowBudget { .. })),
            1
        );
        let freezes: Vec<_> = p
            .constraints
            .iter()
            .filter_map(|c| match c.role {
                RowRole::Freeze { sample, anchor } => Some((sample, anchor)),
                _ => None,
            })
            .collect();
        assert_eq!(freezes, vec![(3, 2), (4, 2)]);
        // band spans [2, 4]
        assert_eq!(p.count_rows(|r| matches!(r, RowRole::Band { .. })), 6);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn no_windows_fixes_every_switch() {
        let (sys, scen) = small();
        let p = build_schedule_program(
            &sys,
            &scen,
            &SwitchingWindows::empty(),
            &ModelOptions::default(),
        )
        .unwrap();
        assert_eq!(p.count_rows(|r| matches!(r, RowRole::InitialHi { .. })), 5);
        assert_eq!(
            p.count_rows(|r| matches!(r, RowRole::Freeze { .. } | RowRole::Xor { .. })),
            0
        );
    }

    #[test]
    fn windows_past_horizon_are_rejected() {
        let (sys, scen) = small();
        let err = build_schedule_program(
            &sys,
            &scen,
            &SwitchingWindows::new(vec![(3, 5)]),
            &ModelOptions::default(),
        );
        assert!(matches!(err, Err(ModelError::Windows(_))));
    }
}
