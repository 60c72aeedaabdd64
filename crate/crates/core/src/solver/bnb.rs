use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::dual::DualFactor;
use super::qp::{solve_qp_with, QpError, QpProblem, WorkingSet};
use crate::model::ReducedProblem;

/// Integrality tolerance on relaxed binaries.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Scaled residual accepted for an integer assignment.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative optimality gap at which nodes are pruned.
    pub gap: f64,
    pub max_nodes: u64,
    /// Worker threads; `1` runs the search on the calling thread.
    pub threads: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap: 1e-6,
            max_nodes: 1_000_000,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Tree exhausted without pruning anything on the gap tolerance.
    Optimal,
    /// Tree exhausted; some nodes were pruned within the gap tolerance.
    GapLimit,
    NodeLimit,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapLimit => "gap_limit",
            SolveStatus::NodeLimit => "node_limit",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolveStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            SolveStatus::Optimal,
            SolveStatus::GapLimit,
            SolveStatus::NodeLimit,
            SolveStatus::Infeasible,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown solver status \"{s}\""))
    }
}

#[derive(Debug, Clone)]
pub struct BinarySolution {
    pub status: SolveStatus,
    /// Best integer point in reduced coordinates.
    pub z: Option<Vec<f64>>,
    /// Objective of `z` including the constant term; `+inf` without one.
    pub objective: f64,
    pub lower_bound: f64,
    /// `(objective - lower_bound) / max(|objective|, tiny)`.
    pub gap: f64,
    pub nodes: u64,
    /// Relaxations that failed to converge; their nodes were branched on
    /// with the parent bound.
    pub qp_failures: u64,
    pub root_kkt: Option<f64>,
}

#[derive(Clone)]
struct Node {
    bound: f64,
    depth: usize,
    seq: u64,
    fix: Vec<i8>,
    start: Arc<Vec<f64>>,
    warm: Option<Arc<WorkingSet>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: lowest bound, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    z: Option<Vec<f64>>,
    value: f64,
}

struct Search {
    qp: QpProblem,
    factor: Option<DualFactor>,
    constant: f64,
    binary: Vec<bool>,
    options: SolverOptions,
}

enum Outcome {
    Pruned { gap_only: bool, bound: f64 },
    Branch(Vec<Node>),
}

impl Search {
    fn threshold(&self, inc: f64) -> f64 {
        if inc.is_finite() {
            inc - self.options.gap * inc.abs()
        } else {
            f64::INFINITY
        }
    }

    fn bounds_of(&self, fix: &[i8]) -> (Vec<f64>, Vec<f64>) {
        let mut lower = self.qp.lower.clone();
        let mut upper = self.qp.upper.clone();
        for (j, &f) in fix.iter().enumerate() {
            if f >= 0 {
                lower[j] = f as f64;
                upper[j] = f as f64;
            }
        }
        (lower, upper)
    }

    /// Objective of an integer point if it is feasible.
    fn evaluate_integer(&self, z: &[f64]) -> Option<f64> {
        (self.qp.violation(z) <= FEASIBILITY_TOL).then(|| self.qp.objective(z) + self.constant)
    }

    fn offer(&self, inc: &Mutex<Incumbent>, z: Vec<f64>, value: f64) {
        let mut inc = inc.lock().unwrap();
        let better = match &inc.z {
            None => true,
            Some(cur) => value < inc.value || (value == inc.value && prefers_hi(&z, cur)),
        };
        if better {
            inc.value = value;
            inc.z = Some(z);
        }
    }

    fn process(
        &self,
        node: Node,
        inc: &Mutex<Incumbent>,
        root_kkt: &Mutex<Option<f64>>,
        failures: &Mutex<u64>,
    ) -> Outcome {
        let cutoff = self.threshold(inc.lock().unwrap().value);
        if node.bound >= cutoff {
            return Outcome::Pruned {
                gap_only: node.bound < inc.lock().unwrap().value,
                bound: node.bound,
            };
        }
        let (lower, upper) = self.bounds_of(&node.fix);
        let sol = solve_qp_with(
            &self.qp,
            self.factor.as_ref(),
            &lower,
            &upper,
            &node.start,
            node.warm.as_deref(),
        );
        let mut failed = false;
        let (z, bound, warm) = match sol {
            Ok(s) => {
                if node.depth == 0 {
                    *root_kkt.lock().unwrap() = Some(s.kkt_residual);
                }
                let bound = (s.objective + self.constant).max(node.bound);
                (s.z, bound, Some(Arc::new(s.working)))
            }
            Err(QpError::Infeasible { .. }) => {
                return Outcome::Pruned {
                    gap_only: false,
                    bound: f64::INFINITY,
                };
            }
            Err(_) => {
                *failures.lock().unwrap() += 1;
                failed = true;
                (node.start.to_vec(), node.bound, None)
            }
        };
        let inc_value = inc.lock().unwrap().value;
        if bound >= self.threshold(inc_value) {
            return Outcome::Pruned {
                gap_only: bound < inc_value,
                bound,
            };
        }
        // Rounding heuristic.
        let rounded: Vec<f64> = z
            .iter()
            .zip(&self.binary)
            .map(|(&v, &b)| {
                if b {
                    if v >= 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect();
        let rounded_fits = rounded
            .iter()
            .zip(lower.iter().zip(&upper))
            .all(|(v, (l, u))| v >= l && v <= u);
        if rounded_fits {
            if let Some(v) = self.evaluate_integer(&rounded) {
                self.offer(inc, rounded.clone(), v);
            }
        }
        let pick = (0..z.len())
            .filter(|&j| self.binary[j] && node.fix[j] < 0)
            .map(|j| (j, z[j].min(1.0 - z[j])))
            .fold(None::<(usize, f64)>, |best, (j, f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((j, f)),
            });
        let branch_on = match pick {
            Some((j, f)) if f > INTEGRALITY_TOL || failed => j,
            Some((j, _)) if !rounded_fits || self.evaluate_integer(&rounded).is_none() => {
                // Integral within tolerance yet infeasible once rounded.
                if z.iter().zip(&rounded).any(|(a, b)| a != b) {
                    j
                } else {
                    return Outcome::Pruned {
                        gap_only: false,
                        bound: f64::INFINITY,
                    };
                }
            }
            _ => {
                // The rounded point is this node's optimum.
                return Outcome::Pruned {
                    gap_only: false,
                    bound: f64::INFINITY,
                };
            }
        };
        let start = Arc::new(z);
        let children = [0i8, 1]
            .into_iter()
            .map(|v| {
                let mut fix = node.fix.clone();
                fix[branch_on] = v;
                Node {
                    bound,
                    depth: node.depth + 1,
                    seq: 0,
                    fix,
                    start: start.clone(),
                    warm: warm.clone(),
                }
            })
            .collect();
        Outcome::Branch(children)
    }
}

/// `a` is preferred over `b` on ties: more hi samples earlier.
fn prefers_hi(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    false
}

struct Shared {
    heap: BinaryHeap<Node>,
    busy: usize,
    nodes: u64,
    seq: u64,
    gap_pruned: f64,
    stopped: bool,
}

/// Best-first branch-and-bound on the binaries of `red`.
pub fn branch_and_bound(red: &ReducedProblem, options: SolverOptions) -> BinarySolution {
    solve_binary_qp(
        QpProblem::from_reduced(red),
        red.vars.iter().map(|v| v.binary).collect(),
        red.constant,
        options,
    )
}

/// Minimizes `qp + constant` with `binary[j]` variables restricted to
/// `{0, 1}`.
pub fn solve_binary_qp(
    qp: QpProblem,
    binary: Vec<bool>,
    constant: f64,
    options: SolverOptions,
) -> BinarySolution {
    let n = qp.dim();
    assert_eq!(binary.len(), n, "one integrality flag per variable");
    let factor = DualFactor::new(&qp);
    let search = Search {
        qp,
        factor,
        constant,
        binary,
        options,
    };
    let inc = Mutex::new(Incumbent {
        z: None,
        value: f64::INFINITY,
    });
    let root_kkt = Mutex::new(None);
    let failures = Mutex::new(0u64);

    // All-hi is the natural first incumbent.
    let all_hi: Vec<f64> = (0..n)
        .map(|j| {
            if search.binary[j] {
                1.0
            } else {
                search.qp.lower[j].max(0.0).min(search.qp.upper[j])
            }
        })
        .collect();
    if let Some(v) = search.evaluate_integer(&all_hi) {
        search.offer(&inc, all_hi.clone(), v);
    }

    let root = Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        seq: 0,
        fix: vec![-1; n],
        start: Arc::new(all_hi),
        warm: None,
    };
    let shared = Mutex::new(Shared {
        heap: BinaryHeap::from([root]),
        busy: 0,
        nodes: 0,
        seq: 1,
        gap_pruned: f64::INFINITY,
        stopped: false,
    });
    let cv = Condvar::new();

    let worker = || loop {
        let node = {
            let mut st = shared.lock().unwrap();
            loop {
                if st.stopped {
                    return;
                }
                if st.nodes >= options.max_nodes && !st.heap.is_empty() {
                    st.stopped = true;
                    cv.notify_all();
                    return;
                }
                if let Some(node) = st.heap.pop() {
                    st.busy += 1;
                    st.nodes += 1;
                    break node;
                }
                if st.busy == 0 {
                    cv.notify_all();
                    return;
                }
                st = cv.wait(st).unwrap();
            }
        };
        let outcome = search.process(node, &inc, &root_kkt, &failures);
        let mut st = shared.lock().unwrap();
        st.busy -= 1;
        match outcome {
            Outcome::Pruned { gap_only, bound } => {
                if gap_only {
                    st.gap_pruned = st.gap_pruned.min(bound);
                }
            }
            Outcome::Branch(children) => {
                for mut c in children {
                    c.seq = st.seq;
                    st.seq += 1;
                    st.heap.push(c);
                }
            }
        }
        cv.notify_all();
    };

    if options.threads <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..options.threads {
                s.spawn(worker);
            }
        });
    }

    let st = shared.into_inner().unwrap();
    let inc = inc.into_inner().unwrap();
    let open_bound = st
        .heap
        .iter()
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);
    let lower_bound = open_bound.min(st.gap_pruned).min(inc.value);
    let status = if st.stopped {
        SolveStatus::NodeLimit
    } else if inc.z.is_none() {
        SolveStatus::Infeasible
    } else if st.gap_pruned.is_finite() {
        SolveStatus::GapLimit
    } else {
        SolveStatus::Optimal
    };
    let gap = if inc.value.is_finite() {
        ((inc.value - lower_bound) / inc.value.abs().max(f64::MIN_POSITIVE)).max(0.0)
    } else {
        f64::INFINITY
    };
    BinarySolution {
        status,
        z: inc.z,
        objective: inc.value,
        lower_bound,
        gap,
        nodes: st.nodes,
        qp_failures: failures.into_inner().unwrap(),
        root_kkt: root_kkt.into_inner().unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::qp::{AbsGroup, AbsTerm};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed(h: DMatrix<f64>, g: DVector<f64>) -> QpProblem {
        let n = g.len();
        QpProblem {
            hessian: h,
            gradient: g,
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            rows: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
            groups: vec![],
            chains: vec![],
        }
    }

    #[test]
    fn relaxation_gap_closes_on_the_integer_optimum() {
        // (s - 0.3)²: relaxed optimum 0 at s = 0.3, integer optimum 0.09 at s = 0.
        let qp = boxed(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -0.6),
        );
        let sol = solve_binary_qp(qp, vec![true], 0.09, SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.z.as_deref(), Some(&[0.0][..]));
        assert_relative_eq!(sol.objective, 0.09, epsilon = 1e-15);
        assert!(sol.root_kkt.unwrap() <= 1e-12);
    }

    #[test]
    fn fully_fixed_problem_has_tight_bound() {
        let mut qp = boxed(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, -1.0]));
        qp.lower = vec![1.0, 0.0];
        qp.upper = vec![1.0, 0.0];
        let sol = solve_binary_qp(qp, vec![true, true], 0.5, SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 2.0);
        assert_relative_eq!(sol.lower_bound, sol.objective);
        assert_eq!(sol.gap, 0.0);
    }

    #[test]
    fn infeasible_rows_give_infeasible_status() {
        let mut qp = boxed(DMatrix::identity(2, 2), DVector::zeros(2));
        // z0 + z1 ≥ 1.5 and z0 + z1 ≤ 1.8 leave no binary point.
        qp.rows = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0]);
        qp.rhs = DVector::from_vec(vec![-1.5, 1.8]);
        let sol = solve_binary_qp(qp, vec![true, true], 0.0, SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.z.is_none());
        assert_eq!(sol.objective, f64::INFINITY);
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> QpProblem {
        let rank = rng.gen_range(1..=n + 1);
        let f = DMatrix::from_fn(rank, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut qp = boxed(
            f.transpose() * f,
            DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
        );
        let m = rng.gen_range(0..3);
        qp.rows = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        qp.rhs = DVector::from_fn(m, |_, _| rng.gen_range(-0.3..1.0));
        if n >= 3 && rng.gen_bool(0.6) {
            let len = rng.gen_range(2..=n);
            let mut terms = vec![AbsTerm {
                coefs: vec![(0, 1.0)],
                constant: -1.0,
            }];
            for j in 1..len {
                terms.push(AbsTerm {
                    coefs: vec![(j, 1.0), (j - 1, -1.0)],
                    constant: 0.0,
                });
            }
            qp.groups.push(AbsGroup {
                terms,
                budget: 1.0,
                slack: None,
            });
        }
        qp
    }

    pub(crate) fn enumerate(qp: &QpProblem) -> Option<(f64, Vec<f64>)> {
        let n = qp.dim();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << n) {
            let z: Vec<f64> = (0..n).map(|j| ((mask >> j) & 1) as f64).collect();
            if qp.violation(&z) <= FEASIBILITY_TOL {
                let v = qp.objective(&z);
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, z));
                }
            }
        }
        best
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..200 {
            let n = rng.gen_range(1..=9);
            let qp = random_instance(&mut rng, n);
            let expected = enumerate(&qp);
            let sol = solve_binary_qp(
                qp.clone(),
                vec![true; n],
                0.0,
                SolverOptions {
                    gap: 0.0,
                    ..Default::default()
                },
            );
            match expected {
                None => assert_eq!(sol.status, SolveStatus::Infeasible, "case {case}"),
                Some((v, _)) => {
                    assert_eq!(sol.status, SolveStatus::Optimal, "case {case}");
                    assert!(
                        (sol.objective - v).abs() <= 1e-9 * (1.0 + v.abs()),
                        "case {case}: {} vs {v}",
                        sol.objective
                    );
                    assert!(sol.lower_bound <= sol.objective + 1e-12);
                }
            }
        }
    }

    #[test]
    fn repeated_and_parallel_runs_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let qp = random_instance(&mut rng, 8);
            let a = solve_binary_qp(qp.clone(), vec![true; 8], 0.0, SolverOptions::default());
            let b = solve_binary_qp(qp.clone(), vec![true; 8], 0.0, SolverOptions::default());
            assert_eq!(a.z, b.z);
            assert_eq!(a.nodes, b.nodes);
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            let par = solve_binary_qp(
                qp,
                vec![true; 8],
                0.0,
                SolverOptions {
                    threads: 4,
                    ..Default::default()
                },
            );
            assert_eq!(par.status, a.status);
            if a.objective.is_finite() {
                assert!((par.objective - a.objective).abs() <= 1e-6 * a.objective.abs().max(1.0));
            }
        }
    }

    #[test]
    fn node_limit_reports_open_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qp = random_instance(&mut rng, 9);
        let sol = solve_binary_qp(
            qp,
            vec![true; 9],
            0.0,
            SolverOptions {
                max_nodes: 1,
                gap: 0.0,
                threads: 1,
            },
        );
        if sol.status == SolveStatus::NodeLimit {
            assert!(sol.lower_bound <= sol.objective);
            assert_eq!(sol.nodes, 1);
        }
    }
}
