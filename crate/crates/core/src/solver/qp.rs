//! Primal active-set method for convex QPs with box bounds, linear rows and
//! absolute-value budget groups.
//!
//! ```text
//! min  ½ zᵀHz + gᵀz
//! s.t. l ≤ z ≤ u,  G z ≤ h,  Σ_t |a_tᵀz + c_t| - s ≤ b  for each group
//! ```
//!
//! `H` may be singular. Group constraints are handled through the facets
//! `Σ σ_t (a_tᵀz + c_t) - s ≤ b`, generated when a step runs into the group.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use super::dual::DualFactor;
use crate::model::{Operand, ReducedProblem, TvGroup};

#[derive(Debug, Clone, PartialEq)]
pub struct AbsTerm {
    pub coefs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AbsTerm {
    pub(super) fn value(&self, z: &[f64]) -> f64 {
        self.constant + self.coefs.iter().map(|&(j, c)| c * z[j]).sum::<f64>()
    }

    fn slope(&self, p: &[f64]) -> f64 {
        self.coefs.iter().map(|&(j, c)| c * p[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsGroup {
    pub terms: Vec<AbsTerm>,
    pub budget: f64,
    /// Variable subtracted from the left-hand side (phase one only).
    pub slack: Option<usize>,
}

impl AbsGroup {
    pub fn from_tv(g: &TvGroup) -> Self {
        let terms = g
            .terms
            .iter()
            .map(|t| {
                let mut coefs = Vec::with_capacity(2);
                let mut constant = 0.0;
                for (op, sign) in [(t.a, 1.0), (t.b, -1.0)] {
                    match op {
                        Operand::Free(k) => coefs.push((k, sign)),
                        Operand::Const(v) => constant += sign * v,
                    }
                }
                AbsTerm { coefs, constant }
            })
            .collect();
        Self {
            terms,
            budget: g.budget,
            slack: None,
        }
    }

    pub(super) fn lhs(&self, z: &[f64]) -> f64 {
        let s = self.slack.map_or(0.0, |k| z[k]);
        self.terms.iter().map(|t| t.value(z).abs()).sum::<f64>() - s
    }
}

/// Switch bits of one window in sample order. A binary point changes value
/// at most once along the chain, so it satisfies the cuts `v_i ≤ v_p + v_j`
/// and `v_p + v_j - v_i ≤ 1` for every `p < i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchChain {
    pub nodes: Vec<Operand>,
}

impl SwitchChain {
    /// The chain behind a window budget, if the budget allows at most one
    /// change and every node is a binary or a 0/1 constant.
    pub fn from_tv(g: &TvGroup, binary: &[bool]) -> Option<Self> {
        if g.budget > 1.0 + 1e-12 || g.terms.is_empty() {
            return None;
        }
        let mut seq = vec![g.terms[0].b, g.terms[0].a];
        for t in &g.terms[1..] {
            let last = *seq.last().unwrap();
            if t.b == last {
                seq.push(t.a);
            } else if t.a == last {
                seq.push(t.b);
            } else if seq.len() == 2 && (t.b == seq[0] || t.a == seq[0]) {
                seq.reverse();
                seq.push(if t.b == seq[1] { t.a } else { t.b });
            } else {
                return None;
            }
        }
        let ok = seq.iter().all(|op| match *op {
            Operand::Free(k) => binary.get(k).copied().unwrap_or(false),
            Operand::Const(v) => v == 0.0 || v == 1.0,
        });
        ok.then_some(Self { nodes: seq })
    }

    /// Most violated cut along the chain, with its excess.
    pub(super) fn worst_cut(&self, chain: usize, z: &[f64]) -> Option<(f64, ChainCut)> {
        let v: Vec<f64> = self.nodes.iter().map(|o| o.value(z)).collect();
        let m = v.len();
        if m < 3 {
            return None;
        }
        // Prefix and suffix extremes with their positions.
        let mut pre = Vec::with_capacity(m);
        let (mut lo, mut hi) = ((v[0], 0), (v[0], 0));
        for (i, &x) in v.iter().enumerate() {
            pre.push((lo, hi));
            if x < lo.0 {
                lo = (x, i);
            }
            if x > hi.0 {
                hi = (x, i);
            }
        }
        let mut suf = vec![((0.0, 0), (0.0, 0)); m];
        let (mut lo, mut hi) = ((v[m - 1], m - 1), (v[m - 1], m - 1));
        for i in (0..m).rev() {
            suf[i] = (lo, hi);
            if v[i] <= lo.0 {
                lo = (v[i], i);
            }
            if v[i] >= hi.0 {
                hi = (v[i], i);
            }
        }
        let mut best: Option<(f64, ChainCut)> = None;
        for i in 1..m - 1 {
            let ((plo, phi), (slo, shi)) = (pre[i], suf[i]);
            let mid = v[i] - plo.0 - slo.0;
            let ends = phi.0 + shi.0 - v[i] - 1.0;
            for (e, p, j, is_ends) in [(mid, plo.1, slo.1, false), (ends, phi.1, shi.1, true)] {
                if best.as_ref().is_none_or(|b| e > b.0) {
                    best = Some((
                        e,
                        ChainCut {
                            chain,
                            p,
                            i,
                            j,
                            ends: is_ends,
                        },
                    ));
                }
            }
        }
        best
    }
}

/// A cut of a [`SwitchChain`] through nodes `p < i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) struct ChainCut {
    pub chain: usize,
    pub p: usize,
    pub i: usize,
    pub j: usize,
    /// `v_p + v_j - v_i ≤ 1` rather than `v_i - v_p - v_j ≤ 0`.
    pub ends: bool,
}

impl ChainCut {
    /// The cut as `Σ c z ≤ rhs`.
    pub(super) fn row(&self, qp: &QpProblem) -> (Vec<(usize, f64)>, f64) {
        let nodes = &qp.chains[self.chain].nodes;
        let signs = if self.ends {
            [1.0, -1.0, 1.0]
        } else {
            [-1.0, 1.0, -1.0]
        };
        let mut rhs = if self.ends { 1.0 } else { 0.0 };
        let mut coefs = Vec::with_capacity(3);
        for (node, k) in [self.p, self.i, self.j].into_iter().zip(signs) {
            match nodes[node] {
                Operand::Free(j) => coefs.push((j, k)),
                Operand::Const(v) => rhs -= k * v,
            }
        }
        (coefs, rhs)
    }
}

/// Convex QP data. `lower[j] == upper[j]` pins a variable.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub groups: Vec<AbsGroup>,
    pub chains: Vec<SwitchChain>,
}

impl QpProblem {
    pub fn from_reduced(p: &ReducedProblem) -> Self {
        let binary: Vec<bool> = p.vars.iter().map(|v| v.binary).collect();
        Self {
            hessian: p.hessian.clone(),
            gradient: p.gradient.clone(),
            lower: p.vars.iter().map(|v| v.lower).collect(),
            upper: p.vars.iter().map(|v| v.upper).collect(),
            rows: p.rows.clone(),
            rhs: p.rhs.clone(),
            groups: p.groups.iter().map(AbsGroup::from_tv).collect(),
            chains: p
                .groups
                .iter()
                .filter_map(|g| SwitchChain::from_tv(g, &binary))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        0.5 * zv.dot(&(&self.hessian * &zv)) + self.gradient.dot(&zv)
    }

    /// Largest bound, row or group violation, rows scaled by `max(1, |h|)`.
    pub fn violation(&self, z: &[f64]) -> f64 {
        self.violation_within(z, &self.lower, &self.upper)
    }

    pub(super) fn violation_within(&self, z: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        let act = &self.rows * &zv;
        let rows = (0..self.rows.nrows())
            .map(|r| (act[r] - self.rhs[r]).max(0.0) / self.rhs[r].abs().max(1.0))
            .fold(0.0, f64::max);
        let groups = self
            .groups
            .iter()
            .map(|g| (g.lhs(z) - g.budget).max(0.0) / g.budget.abs().max(1.0))
            .fold(0.0, f64::max);
        let chains = self
            .chains
            .iter()
            .enumerate()
            .filter_map(|(c, ch)| ch.worst_cut(c, z))
            .map(|(e, _)| e.max(0.0))
            .fold(0.0, f64::max);
        let bounds = (0..self.dim())
            .map(|j| (lower[j] - z[j]).max(z[j] - upper[j]).max(0.0))
            .fold(0.0, f64::max);
        rows.max(groups).max(chains).max(bounds)
    }

    pub(super) fn scale(&self) -> f64 {
        let hmax = self.hessian.amax();
        let gmax = self.gradient.amax();
        let zmax = self
            .lower
            .iter()
            .chain(&self.upper)
            .filter(|v| v.is_finite())
            .fold(1.0f64, |a, v| a.max(v.abs()));
        1f64.max(gmax).max(hmax * zmax)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("relaxation is infeasible (phase-one residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("relaxation is unbounded below")]
    Unbounded,
    #[error("degenerate QP after {iterations} iterations: {detail}")]
    Degenerate { iterations: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Active {
    Row(usize),
    Facet { group: usize, sigma: Vec<i8> },
    Cut(ChainCut),
}

/// Active constraints at a solution, reusable as a warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingSet {
    pub(super) bounds: Vec<BoundState>,
    pub(super) active: Vec<Active>,
}

impl WorkingSet {
    pub(super) fn empty(n: usize) -> Self {
        Self {
            bounds: vec![BoundState::Free; n],
            active: Vec::new(),
        }
    }

    pub fn active_bounds(&self) -> usize {
        self.bounds
            .iter()
            .filter(|b| **b != BoundState::Free)
            .count()
    }

    pub fn active_rows(&self) -> usize {
        self.active.len()
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Scaled KKT residual: stationarity, primal and dual feasibility.
    pub kkt_residual: f64,
    pub working: WorkingSet,
}

struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn apply(&self, x: &mut [f64]) {
        let dot: f64 = self.v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let s = self.beta * dot;
        for (xi, vi) in x.iter_mut().zip(&self.v) {
            *xi -= s * vi;
        }
    }
}

/// Orthogonal basis of the constraint rows restricted to the free variables.
struct NullSpace {
    reflectors: Vec<Reflector>,
    /// Upper-triangular factor, column-major `k × k`.
    r: Vec<Vec<f64>>,
    kept: Vec<usize>,
}

impl NullSpace {
    fn build(rows: &[Vec<f64>], dim: usize) -> Self {
        let mut reflectors: Vec<Reflector> = Vec::new();
        let mut r = Vec::new();
        let mut kept = Vec::new();
        for (idx, row) in rows.iter().enumerate() {
            let norm0 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut c = row.clone();
            for h in &reflectors {
                h.apply(&mut c);
            }
            let k = reflectors.len();
            if k >= dim {
                continue;
            }
            let tail = c[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if tail <= 1e-10 * norm0 {
                continue;
            }
            let alpha = if c[k] >= 0.0 { -tail } else { tail };
            let mut v = vec![0.0; dim];
            v[k] = c[k] - alpha;
            v[k + 1..].copy_from_slice(&c[k + 1..]);
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let mut col: Vec<f64> = c[..k].to_vec();
            col.push(alpha);
            r.push(col);
            reflectors.push(Reflector { v, beta: 2.0 / vv });
            kept.push(idx);
        }
        Self {
            reflectors,
            r,
            kept,
        }
    }

    fn rank(&self) -> usize {
        self.reflectors.len()
    }

    /// `Qᵀ x`.
    fn qt(&self, x: &mut [f64]) {
        for h in &self.reflectors {
            h.apply(x);
        }
    }

    /// `Q x`.
    fn q(&self, x: &mut [f64]) {
        for h in self.reflectors.iter().rev() {
            h.apply(x);
        }
    }

    /// `Qᵀ M Q` for symmetric `M`.
    fn congruence(&self, m: &mut DMatrix<f64>) {
        let n = m.nrows();
        for h in &self.reflectors {
            let v = DVector::from_column_slice(&h.v);
            // M ← (I - β v vᵀ) M (I - β v vᵀ)
            let w = &*m * &v;
            let vw = v.dot(&w);
            let u = &w * h.beta - &v * (0.5 * h.beta * h.beta * vw);
            for j in 0..n {
                for i in 0..n {
                    m[(i, j)] -= v[i] * u[j] + u[i] * v[j];
                }
            }
        }
    }

    /// Solves `R λ = b`.
    fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        let k = self.rank();
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = b[i];
            for j in i + 1..k {
                s -= self.r[j][i] * x[j];
            }
            x[i] = s / self.r[i][i];
        }
        x
    }
}

enum Step {
    Newton(Vec<f64>),
    Ray(Vec<f64>),
    Stationary,
}

enum Block {
    Bound(usize, BoundState),
    Row(usize),
    Group(usize, Vec<i8>),
}

struct Solver<'a> {
    qp: &'a QpProblem,
    lower: &'a [f64],
    upper: &'a [f64],
    n: usize,
    scale: f64,
    hscale: f64,
}

impl<'a> Solver<'a> {
    fn new(qp: &'a QpProblem, lower: &'a [f64], upper: &'a [f64]) -> Self {
        Self {
            qp,
            lower,
            upper,
            n: qp.dim(),
            scale: qp.scale(),
            hscale: qp.hessian.amax(),
        }
    }

    fn dense(&self, a: &Active) -> (Vec<f64>, f64) {
        match a {
            Active::Row(r) => (
                self.qp.rows.row(*r).iter().copied().collect(),
                self.qp.rhs[*r],
            ),
            Active::Cut(cut) => {
                let (coefs, rhs) = cut.row(self.qp);
                let mut row = vec![0.0; self.n];
                for (j, c) in coefs {
                    row[j] += c;
                }
                (row, rhs)
            }
            Active::Facet { group, sigma } => {
                let g = &self.qp.groups[*group];
                let mut row = vec![0.0; self.n];
                let mut rhs = g.budget;
                for (t, &s) in g.terms.iter().zip(sigma) {
                    if s == 0 {
                        continue;
                    }
                    let s = s as f64;
                    for &(j, c) in &t.coefs {
                        row[j] += s * c;
                    }
                    rhs -= s * t.constant;
                }
                if let Some(k) = g.slack {
                    row[k] -= 1.0;
                }
                (row, rhs)
            }
        }
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        (&self.qp.hessian * zv + &self.qp.gradient)
            .iter()
            .copied()
            .collect()
    }

    fn solve(&self, z0: &[f64], warm: Option<&WorkingSet>) -> Result<QpSolution, QpError> {
        let n = self.n;
        let mut z = z0.to_vec();
        let mut ws = WorkingSet::empty(n);
        for j in 0..n {
            z[j] = z[j].clamp(self.lower[j], self.upper[j]);
            if self.lower[j] == self.upper[j] {
                ws.bounds[j] = BoundState::Lower;
            }
        }
        if let Some(w) = warm {
            self.adopt(&mut ws, w, &z);
        }
        let mut dense: Vec<(Vec<f64>, f64)> = ws.active.iter().map(|a| self.dense(a)).collect();
        let max_iter = 50 * (n + self.qp.rows.nrows() + 10) + 20 * self.qp.groups.len();
        let mut stalls = 0usize;
        for iter in 0..max_iter {
            let free: Vec<usize> = (0..n)
                .filter(|&j| ws.bounds[j] == BoundState::Free)
                .collect();
            let restricted: Vec<Vec<f64>> = dense
                .iter()
                .map(|(row, _)| free.iter().map(|&j| row[j]).collect())
                .collect();
            let ns = NullSpace::build(&restricted, free.len());
            let grad = self.gradient(&z);
            let step = self.step(&free, &ns, &grad)?;
            let (p, alpha_max) = match step {
                Step::Stationary => {
                    match self.release(&mut ws, &free, &ns, &grad, &dense, stalls > 20) {
                        None => {
                            let kkt = self.kkt(&z, &free, &ns, &grad, &dense);
                            return Ok(QpSolution {
                                objective: self.qp.objective(&z),
                                z,
                                iterations: iter,
                                kkt_residual: kkt,
                                working: ws,
                            });
                        }
                        Some(removed) => {
                            if let Some(i) = removed {
                                dense.remove(i);
                            }
                            continue;
                        }
                    }
                }
                Step::Newton(p) => (p, 1.0),
                Step::Ray(p) => (p, f64::INFINITY),
            };
            let (alpha, block) = self.ratio_test(&z, &p, &ws, alpha_max);
            if !alpha.is_finite() {
                return Err(QpError::Unbounded);
            }
            if alpha <= 0.0 {
                stalls += 1;
            } else {
                stalls = 0;
            }
            for j in 0..n {
                z[j] += alpha * p[j];
            }
            match block {
                None => {}
                Some(Block::Bound(j, state)) => {
                    z[j] = if state == BoundState::Lower {
                        self.lower[j]
                    } else {
                        self.upper[j]
                    };
                    ws.bounds[j] = state;
                }
                Some(Block::Row(r)) => {
                    let a = Active::Row(r);
                    dense.push(self.dense(&a));
                    ws.active.push(a);
                }
                Some(Block::Group(g, sigma)) => {
                    let a = Active::Facet { group: g, sigma };
                    dense.push(self.dense(&a));
                    ws.active.push(a);
                }
            }
            for j in 0..n {
                z[j] = z[j].clamp(self.lower[j], self.upper[j]);
            }
        }
        Err(QpError::Degenerate {
            iterations: max_iter,
            detail: format!(
                "no convergence; {} active rows, {stalls} zero-length steps",
                dense.len()
            ),
        })
    }

    /// Keeps warm-start constraints that are active at `z`.
    fn adopt(&self, ws: &mut WorkingSet, warm: &WorkingSet, z: &[f64]) {
        for j in 0..self.n {
            if ws.bounds[j] != BoundState::Free || warm.bounds.len() != self.n {
                continue;
            }
            match warm.bounds[j] {
                BoundState::Lower if z[j] == self.lower[j] => ws.bounds[j] = BoundState::Lower,
                BoundState::Upper if z[j] == self.upper[j] => ws.bounds[j] = BoundState::Upper,
                _ => {}
            }
        }
        let tol = 1e-12;
        for a in &warm.active {
            let (row, rhs) = self.dense(a);
            let act: f64 = row.iter().zip(z).map(|(x, y)| x * y).sum();
            let tight = match a {
                Active::Row(_) | Active::Cut(_) => (act - rhs).abs() <= tol * rhs.abs().max(1.0),
                Active::Facet { group, .. } => {
                    (act - rhs).abs() <= tol * rhs.abs().max(1.0)
                        && (self.qp.groups[*group].lhs(z) - act).abs() <= tol
                }
            };
            if tight {
                ws.active.push(a.clone());
            }
        }
    }

    fn step(&self, free: &[usize], ns: &NullSpace, grad: &[f64]) -> Result<Step, QpError> {
        let f = free.len();
        let k = ns.rank();
        if f == k {
            return Ok(Step::Stationary);
        }
        let mut gf: Vec<f64> = free.iter().map(|&j| grad[j]).collect();
        ns.qt(&mut gf);
        let r = DVector::from_column_slice(&gf[k..]);
        let mut hz = DMatrix::from_fn(f, f, |a, b| self.qp.hessian[(free[a], free[b])]);
        if k > 0 {
            ns.congruence(&mut hz);
        }
        let hz = hz.view((k, k), (f - k, f - k)).into_owned();
        let hz = (&hz + hz.transpose()) * 0.5;
        let rnorm = r.amax();
        let gtol = 1e-14 * self.scale;

        let diag_max = hz.diagonal().amax();
        let newton = if diag_max > 0.0 {
            hz.clone().cholesky().and_then(|ch| {
                let l = ch.l_dirty();
                let piv_min = (0..f - k)
                    .map(|i| l[(i, i)] * l[(i, i)])
                    .fold(f64::INFINITY, f64::min);
                (piv_min > 1e-12 * diag_max).then(|| ch.solve(&r))
            })
        } else {
            None
        };
        let pz = match newton {
            Some(sol) => {
                if rnorm <= gtol {
                    return Ok(Step::Stationary);
                }
                Step::Newton((-sol).iter().copied().collect())
            }
            None => {
                let eig = SymmetricEigen::new(hz);
                let ltol = 1e-11 * self.hscale.max(f64::MIN_POSITIVE) * (f - k) as f64;
                let s = eig.eigenvectors.transpose() * &r;
                let mut ray = DVector::zeros(f - k);
                let mut newton = DVector::zeros(f - k);
                let mut ray_norm = 0.0f64;
                for i in 0..f - k {
                    let col = eig.eigenvectors.column(i);
                    if eig.eigenvalues[i] > ltol {
                        newton -= col * (s[i] / eig.eigenvalues[i]);
                    } else {
                        ray -= col * s[i];
                        ray_norm = ray_norm.max(s[i].abs());
                    }
                }
                if ray_norm > 1e-12 * self.scale {
                    let m = ray.amax();
                    Step::Ray((ray / m).iter().copied().collect())
                } else if rnorm <= gtol {
                    return Ok(Step::Stationary);
                } else {
                    Step::Newton(newton.iter().copied().collect())
                }
            }
        };
        let (mut local, kind_ray) = match pz {
            Step::Newton(v) => (v, false),
            Step::Ray(v) => (v, true),
            Step::Stationary => unreachable!(),
        };
        if !kind_ray && local.iter().all(|v| v.abs() <= 1e-15) {
            return Ok(Step::Stationary);
        }
        let mut full_f = vec![0.0; k];
        full_f.append(&mut local);
        ns.q(&mut full_f);
        let mut p = vec![0.0; self.n];
        for (a, &j) in free.iter().enumerate() {
            p[j] = full_f[a];
        }
        Ok(if kind_ray {
            Step::Ray(p)
        } else {
            Step::Newton(p)
        })
    }

    /// Multipliers of the kept rows, `R λ = -Yᵀ∇_F`.
    fn multipliers(&self, free: &[usize], ns: &NullSpace, grad: &[f64]) -> Vec<f64> {
        let mut gf: Vec<f64> = free.iter().map(|&j| grad[j]).collect();
        ns.qt(&mut gf);
        let b: Vec<f64> = gf[..ns.rank()].iter().map(|v| -v).collect();
        ns.solve_r(&b)
    }

    /// Drops the constraint with the most negative multiplier, or returns
    /// `None` at a KKT point. The inner option is the removed row index.
    fn release(
        &self,
        ws: &mut WorkingSet,
        free: &[usize],
        ns: &NullSpace,
        grad: &[f64],
        dense: &[(Vec<f64>, f64)],
        bland: bool,
    ) -> Option<Option<usize>> {
        let lambda = self.multipliers(free, ns, grad);
        let tol = 1e-11 * self.scale;
        let mut worst: Option<(f64, Option<usize>, Option<usize>)> = None;
        let mut consider = |value: f64, row: Option<usize>, bound: Option<usize>| {
            if value < -tol {
                let better = match worst {
                    None => true,
                    Some((w, _, _)) => !bland && value < w,
                };
                if better {
                    worst = Some((value, row, bound));
                }
            }
        };
        for (pos, &row) in ns.kept.iter().enumerate() {
            let norm = dense[row]
                .0
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(1e-300);
            consider(lambda[pos] * norm.recip().min(1.0), Some(row), None);
        }
        for j in 0..self.n {
            let state = ws.bounds[j];
            if state == BoundState::Free || self.lower[j] == self.upper[j] {
                continue;
            }
            let mut full = grad[j];
            for (pos, &row) in ns.kept.iter().enumerate() {
                full += lambda[pos] * dense[row].0[j];
            }
            let mu = if state == BoundState::Lower {
                full
            } else {
                -full
            };
            consider(mu, None, Some(j));
        }
        let (_, row, bound) = worst?;
        if let Some(j) = bound {
            ws.bounds[j] = BoundState::Free;
            return Some(None);
        }
        let row = row.unwrap();
        ws.active.remove(row);
        Some(Some(row))
    }

    fn kkt(
        &self,
        z: &[f64],
        free: &[usize],
        ns: &NullSpace,
        grad: &[f64],
        dense: &[(Vec<f64>, f64)],
    ) -> f64 {
        let lambda = self.multipliers(free, ns, grad);
        let mut stat = 0.0f64;
        for &j in free {
            let mut s = grad[j];
            for (pos, &row) in ns.kept.iter().enumerate() {
                s += lambda[pos] * dense[row].0[j];
            }
            stat = stat.max(s.abs());
        }
        let dual = lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
        let comp = dense
            .iter()
            .map(|(row, rhs)| {
                let act: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                (act - rhs).abs() / rhs.abs().max(1.0)
            })
            .fold(0.0, f64::max);
        (stat / self.scale)
            .max(dual / self.scale)
            .max(comp)
            .max(self.qp.violation_within(z, self.lower, self.upper))
    }

    fn ratio_test(
        &self,
        z: &[f64],
        p: &[f64],
        ws: &WorkingSet,
        alpha_max: f64,
    ) -> (f64, Option<Block>) {
        let mut best = alpha_max;
        let mut block = None;
        for j in 0..self.n {
            if ws.bounds[j] != BoundState::Free || p[j] == 0.0 {
                continue;
            }
            let (dist, state) = if p[j] < 0.0 {
                ((z[j] - self.lower[j]) / -p[j], BoundState::Lower)
            } else {
                ((self.upper[j] - z[j]) / p[j], BoundState::Upper)
            };
            if dist.is_finite() && dist.max(0.0) < best {
                best = dist.max(0.0);
                block = Some(Block::Bound(j, state));
            }
        }
        let in_ws: Vec<bool> = {
            let mut v = vec![false; self.qp.rows.nrows()];
            for a in &ws.active {
                if let Active::Row(r) = a {
                    v[*r] = true;
                }
            }
            v
        };
        let pv = DVector::from_column_slice(p);
        let zv = DVector::from_column_slice(z);
        let ap = &self.qp.rows * &pv;
        let az = &self.qp.rows * &zv;
        for r in 0..self.qp.rows.nrows() {
            if in_ws[r] {
                continue;
            }
            let rownorm = self.qp.rows.row(r).amax();
            if ap[r] <= 1e-13 * rownorm * pv.amax() {
                continue;
            }
            let dist = ((self.qp.rhs[r] - az[r]) / ap[r]).max(0.0);
            if dist < best {
                best = dist;
                block = Some(Block::Row(r));
            }
        }
        for (gi, g) in self.qp.groups.iter().enumerate() {
            if let Some((dist, sigma)) = group_hit(g, z, p, best) {
                if dist < best {
                    best = dist;
                    block = Some(Block::Group(gi, sigma));
                }
            }
        }
        (best, block)
    }
}

/// First step length at which the group constraint would be exceeded,
/// with the sign pattern of the supporting facet there.
fn group_hit(g: &AbsGroup, z: &[f64], p: &[f64], limit: f64) -> Option<(f64, Vec<i8>)> {
    let pmax = p.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let d: Vec<f64> = g.terms.iter().map(|t| t.value(z)).collect();
    // Slopes at roundoff level relative to the step are treated as zero.
    let q: Vec<f64> = g
        .terms
        .iter()
        .map(|t| {
            let q = t.slope(p);
            let size = t.coefs.iter().map(|c| c.1.abs()).sum::<f64>() * pmax;
            if q.abs() <= 1e-12 * size {
                0.0
            } else {
                q
            }
        })
        .collect();
    let slack_rate = g.slack.map_or(0.0, |k| p[k]);
    let s0 = g.slack.map_or(0.0, |k| z[k]);
    let qmax = q.iter().fold(slack_rate.abs(), |a, b| a.max(b.abs()));
    if qmax == 0.0 {
        return None;
    }
    let ztol = 1e-14 * (1.0 + g.budget.abs());
    let sign_after = |dt: f64, qt: f64| -> f64 {
        if dt.abs() > ztol {
            dt.signum()
        } else if qt != 0.0 {
            qt.signum()
        } else {
            0.0
        }
    };
    let mut phi: f64 = d.iter().map(|x| x.abs()).sum::<f64>() - s0;
    let mut slope: f64 = d
        .iter()
        .zip(&q)
        .map(|(&dt, &qt)| sign_after(dt, qt) * qt)
        .sum::<f64>()
        - slack_rate;
    let mut breaks: Vec<(f64, usize)> = d
        .iter()
        .zip(&q)
        .enumerate()
        .filter_map(|(t, (&dt, &qt))| {
            if qt == 0.0 || dt.abs() <= ztol {
                return None;
            }
            let a = -dt / qt;
            (a > 0.0).then_some((a, t))
        })
        .collect();
    breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut at = 0.0;
    let slope_tol = 1e-12 * pmax.max(qmax) * (d.len() as f64 + 1.0);
    let mut idx = 0;
    loop {
        let next = breaks.get(idx).map_or(f64::INFINITY, |b| b.0);
        if slope > slope_tol {
            let hit = at + ((g.budget - phi) / slope).max(0.0);
            if hit <= next && hit < limit {
                let sigma = d
                    .iter()
                    .zip(&q)
                    .map(|(&dt, &qt)| sign_after(dt + hit * qt, qt) as i8)
                    .collect();
                return Some((hit, sigma));
            }
        }
        if next >= limit || !next.is_finite() {
            return None;
        }
        phi += slope * (next - at);
        at = next;
        // Every term crossing zero here turns its slope from -|q| to +|q|.
        while idx < breaks.len() && breaks[idx].0 == next {
            slope += 2.0 * q[breaks[idx].1].abs();
            idx += 1;
        }
    }
}

/// Minimizes the QP from `start`, running a phase-one LP first when `start`
/// is infeasible.
pub fn solve_qp(
    qp: &QpProblem,
    start: &[f64],
    warm: Option<&WorkingSet>,
) -> Result<QpSolution, QpError> {
    solve_qp_within(qp, &qp.lower, &qp.upper, start, warm)
}

/// [`solve_qp`] with the box replaced by `lower ≤ z ≤ upper`.
///
/// A positive definite `H` goes to the dual active-set method, which needs
/// no starting point. Otherwise, or if that method stalls, the primal method
/// runs from `start`.
pub fn solve_qp_within(
    qp: &QpProblem,
    lower: &[f64],
    upper: &[f64],
    start: &[f64],
    warm: Option<&WorkingSet>,
) -> Result<QpSolution, QpError> {
    solve_qp_with(qp, DualFactor::new(qp).as_ref(), lower, upper, start, warm)
}

/// [`solve_qp_within`] reusing a factorization of `qp`'s Hessian.
pub(super) fn solve_qp_with(
    qp: &QpProblem,
    factor: Option<&DualFactor>,
    lower: &[f64],
    upper: &[f64],
    start: &[f64],
    warm: Option<&WorkingSet>,
) -> Result<QpSolution, QpError> {
    assert!(
        lower.len() == qp.dim() && upper.len() == qp.dim(),
        "dimension mismatch"
    );
    if let Some(f) = factor {
        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Err(QpError::Infeasible {
                residual: f64::INFINITY,
            });
        }
        match f.solve(qp, lower, upper, warm) {
            Err(QpError::Degenerate { .. }) => {}
            other => return other,
        }
    }
    solve_primal(qp, lower, upper, start, warm)
}

/// Primal active-set method from `start`. Chain cuts are enforced by
/// re-solving with the violated ones added as rows.
pub(super) fn solve_primal(
    qp: &QpProblem,
    lower: &[f64],
    upper: &[f64],
    start: &[f64],
    warm: Option<&WorkingSet>,
) -> Result<QpSolution, QpError> {
    if qp.chains.is_empty() {
        return primal_core(qp, lower, upper, start, warm);
    }
    let m = qp.rows.nrows();
    let mut aug = qp.clone();
    let mut cuts: Vec<ChainCut> = Vec::new();
    let mut start = start.to_vec();
    let mut warm = warm.cloned();
    loop {
        let mut sol = primal_core(&aug, lower, upper, &start, warm.as_ref())?;
        let violated: Vec<ChainCut> = qp
            .chains
            .iter()
            .enumerate()
            .filter_map(|(c, ch)| ch.worst_cut(c, &sol.z))
            .filter(|(e, _)| *e > 1e-11)
            .map(|(_, cut)| cut)
            .collect();
        if violated.is_empty() {
            for a in sol.working.active.iter_mut() {
                if let Active::Row(r) = *a {
                    if r >= m {
                        *a = Active::Cut(cuts[r - m]);
                    }
                }
            }
            return Ok(sol);
        }
        for cut in violated {
            let (coefs, rhs) = cut.row(qp);
            let r = aug.rows.nrows();
            aug.rows = aug.rows.clone().insert_row(r, 0.0);
            for (j, c) in coefs {
                aug.rows[(r, j)] += c;
            }
            aug.rhs = aug.rhs.clone().insert_row(r, rhs);
            cuts.push(cut);
        }
        start = sol.z;
        warm = None;
    }
}

fn primal_core(
    qp: &QpProblem,
    lower: &[f64],
    upper: &[f64],
    start: &[f64],
    warm: Option<&WorkingSet>,
) -> Result<QpSolution, QpError> {
    let n = qp.dim();
    assert!(
        lower.len() == n && upper.len() == n && start.len() == n,
        "dimension mismatch"
    );
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(QpError::Infeasible {
            residual: f64::INFINITY,
        });
    }
    let mut z: Vec<f64> = (0..n).map(|j| start[j].clamp(lower[j], upper[j])).collect();
    let mut warm = warm;
    if qp.violation_within(&z, lower, upper) > 1e-12 {
        z = phase_one(qp, lower, upper, &z)?;
        warm = None;
    }
    Solver::new(qp, lower, upper).solve(&z, warm)
}

/// `min τ` subject to `G z - τ ≤ h`, group excess `≤ τ` and the box.
fn phase_one(
    qp: &QpProblem,
    lower: &[f64],
    upper: &[f64],
    z0: &[f64],
) -> Result<Vec<f64>, QpError> {
    let n = qp.dim();
    let m = qp.rows.nrows();
    let tau = n;
    let mut rows = DMatrix::zeros(m, n + 1);
    rows.view_mut((0, 0), (m, n)).copy_from(&qp.rows);
    // Rows are scaled like `violation` so τ measures the same residual.
    let mut rhs = qp.rhs.clone();
    for r in 0..m {
        let s = qp.rhs[r].abs().max(1.0);
        for c in 0..n {
            rows[(r, c)] /= s;
        }
        rhs[r] /= s;
        rows[(r, tau)] = -1.0;
    }
    let groups = qp
        .groups
        .iter()
        .map(|g| AbsGroup {
            terms: g.terms.clone(),
            budget: g.budget,
            slack: Some(tau),
        })
        .collect();
    let mut gradient = DVector::zeros(n + 1);
    gradient[tau] = 1.0;
    let mut lower = lower.to_vec();
    let mut upper = upper.to_vec();
    lower.push(0.0);
    upper.push(f64::INFINITY);
    let aux = QpProblem {
        hessian: DMatrix::zeros(n + 1, n + 1),
        gradient,
        lower,
        upper,
        rows,
        rhs,
        groups,
        chains: Vec::new(),
    };
    let mut start = z0.to_vec();
    let zv = DVector::from_column_slice(z0);
    let act = aux.rows.view((0, 0), (m, n)) * &zv;
    let needed = (0..m)
        .map(|r| act[r] - aux.rhs[r])
        .chain(qp.groups.iter().map(|g| g.lhs(z0) - g.budget))
        .fold(0.0, f64::max);
    start.push(needed * (1.0 + 1e-9) + 1e-12);
    let sol = Solver::new(&aux, &aux.lower, &aux.upper).solve(&start, None)?;
    let residual = sol.z[tau];
    if residual > 1e-9 {
        return Err(QpError::Infeasible { residual });
    }
    Ok(sol.z[..n].to_vec())
}
