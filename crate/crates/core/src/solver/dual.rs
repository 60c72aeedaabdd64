//! Dual active-set method (Goldfarb and Idnani) for QPs whose Hessian is
//! positive definite.
//!
//! The iteration starts at the unconstrained minimizer and adds one violated
//! constraint at a time while keeping the primal point optimal for the
//! active set. `J = L⁻ᵀQ` and the triangular factor `R` of the active
//! normals are updated with Givens rotations, so an iteration costs `O(n²)`
//! once `H = LLᵀ` has been factored. Group constraints are separated on
//! demand: the facet added is the one supporting the group at the current
//! point.

use nalgebra::{DMatrix, DVector};

use super::qp::{Active, BoundState, ChainCut, QpError, QpProblem, QpSolution, WorkingSet};

/// Cholesky data shared by every solve with the same `H` and `g`.
#[derive(Debug, Clone)]
pub(super) struct DualFactor {
    j0: DMatrix<f64>,
    x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Con {
    Lower(usize),
    Upper(usize),
    Fixed(usize),
    Row(usize),
    Cut(ChainCut),
    Facet { group: usize, sigma: Vec<i8> },
}

/// `normal · x ≥ rhs`, or `=` for pinned variables.
struct Entry {
    con: Con,
    normal: DVector<f64>,
    rhs: f64,
    equality: bool,
}

fn unit(n: usize, j: usize, sign: f64) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[j] = sign;
    v
}

/// Rotates columns `a` and `b` of `m` by `(c, s)`.
fn rotate_columns(m: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (x, y) = (m[(row, a)], m[(row, b)]);
        m[(row, a)] = c * x + s * y;
        m[(row, b)] = c * y - s * x;
    }
}

impl DualFactor {
    /// `None` when `H` is not safely positive definite.
    pub(super) fn new(qp: &QpProblem) -> Option<Self> {
        let n = qp.dim();
        let h = (&qp.hessian + qp.hessian.transpose()) * 0.5;
        let diag_max = h.diagonal().amax();
        if n == 0 || diag_max <= 0.0 || !diag_max.is_finite() {
            return None;
        }
        let ch = h.cholesky()?;
        let l = ch.l();
        let piv_min = (0..n)
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if piv_min <= 1e-9 * diag_max {
            return None;
        }
        let j0 = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(n, n))?;
        let x0 = (-ch.solve(&qp.gradient)).iter().copied().collect();
        Some(Self { j0, x0 })
    }

    fn entry(qp: &QpProblem, con: Con, lower: &[f64], upper: &[f64]) -> Entry {
        let n = qp.dim();
        let (normal, rhs, equality) = match &con {
            Con::Lower(j) => (unit(n, *j, 1.0), lower[*j], false),
            Con::Upper(j) => (unit(n, *j, -1.0), -upper[*j], false),
            Con::Fixed(j) => (unit(n, *j, 1.0), lower[*j], true),
            Con::Row(r) => (-qp.rows.row(*r).transpose(), -qp.rhs[*r], false),
            Con::Cut(cut) => {
                let (coefs, rhs) = cut.row(qp);
                let mut normal = DVector::zeros(n);
                for (j, c) in coefs {
                    normal[j] -= c;
                }
                (normal, -rhs, false)
            }
            Con::Facet { group, sigma } => {
                let g = &qp.groups[*group];
                let mut normal = DVector::zeros(n);
                let mut rhs = -g.budget;
                for (t, &s) in g.terms.iter().zip(sigma) {
                    let s = s as f64;
                    for &(j, c) in &t.coefs {
                        normal[j] -= s * c;
                    }
                    rhs += s * t.constant;
                }
                if let Some(k) = g.slack {
                    normal[k] += 1.0;
                }
                (normal, rhs, false)
            }
        };
        Entry {
            con,
            normal,
            rhs,
            equality,
        }
    }

    /// Most violated inequality at `x`, violations scaled like
    /// [`QpProblem::violation`].
    fn most_violated(
        qp: &QpProblem,
        lower: &[f64],
        upper: &[f64],
        x: &[f64],
        in_set: &[bool],
    ) -> Option<Con> {
        let tol = 1e-11;
        let mut best: Option<(f64, Con)> = None;
        let consider = |best: &mut Option<(f64, Con)>, v: f64, con: Con| {
            if v > tol && best.as_ref().is_none_or(|(b, _)| v > *b) {
                *best = Some((v, con));
            }
        };
        for j in 0..qp.dim() {
            if in_set[j] || lower[j] == upper[j] {
                continue;
            }
            if lower[j].is_finite() {
                consider(
                    &mut best,
                    (lower[j] - x[j]) / lower[j].abs().max(1.0),
                    Con::Lower(j),
                );
            }
            if upper[j].is_finite() {
                consider(
                    &mut best,
                    (x[j] - upper[j]) / upper[j].abs().max(1.0),
                    Con::Upper(j),
                );
            }
        }
        let xv = DVector::from_column_slice(x);
        let act = &qp.rows * &xv;
        for r in 0..qp.rows.nrows() {
            if qp.rhs[r].is_finite() {
                consider(
                    &mut best,
                    (act[r] - qp.rhs[r]) / qp.rhs[r].abs().max(1.0),
                    Con::Row(r),
                );
            }
        }
        for (c, ch) in qp.chains.iter().enumerate() {
            if let Some((excess, cut)) = ch.worst_cut(c, x) {
                consider(&mut best, excess, Con::Cut(cut));
            }
        }
        // Facets change with the sign pattern, so they wait until the box
        // and rows hold.
        if best.is_some() {
            return best.map(|(_, c)| c);
        }
        for (gi, g) in qp.groups.iter().enumerate() {
            let excess = (g.lhs(x) - g.budget) / g.budget.abs().max(1.0);
            if excess > tol {
                let sigma = g
                    .terms
                    .iter()
                    .map(|t| {
                        let v = t.value(x);
                        if v > 0.0 {
                            1
                        } else if v < 0.0 {
                            -1
                        } else {
                            0
                        }
                    })
                    .collect();
                consider(&mut best, excess, Con::Facet { group: gi, sigma });
            }
        }
        best.map(|(_, c)| c)
    }

    /// Rebuilds the factors for the constraints of `warm` that still apply,
    /// or `None` if they are no longer dual feasible.
    #[allow(clippy::type_complexity)]
    fn warm_state(
        &self,
        qp: &QpProblem,
        lower: &[f64],
        upper: &[f64],
        warm: &WorkingSet,
    ) -> Option<(
        DVector<f64>,
        DMatrix<f64>,
        DMatrix<f64>,
        Vec<Entry>,
        Vec<f64>,
    )> {
        let n = qp.dim();
        if warm.bounds.len() != n {
            return None;
        }
        let mut cons: Vec<Con> = (0..n)
            .filter(|&k| lower[k] == upper[k] && warm.bounds[k] != BoundState::Free)
            .map(Con::Fixed)
            .collect();
        for k in 0..n {
            if lower[k] == upper[k] {
                continue;
            }
            match warm.bounds[k] {
                BoundState::Lower if lower[k].is_finite() => cons.push(Con::Lower(k)),
                BoundState::Upper if upper[k].is_finite() => cons.push(Con::Upper(k)),
                _ => {}
            }
        }
        for a in &warm.active {
            cons.push(match a {
                Active::Row(r) => Con::Row(*r),
                Active::Cut(cut) => Con::Cut(*cut),
                Active::Facet { group, sigma } => Con::Facet {
                    group: *group,
                    sigma: sigma.clone(),
                },
            });
        }
        let mut j = self.j0.clone();
        let mut r = DMatrix::<f64>::zeros(n, n);
        let mut active: Vec<Entry> = Vec::new();
        for con in cons {
            let q = active.len();
            if q == n {
                break;
            }
            let entry = Self::entry(qp, con, lower, upper);
            let mut d = j.tr_mul(&entry.normal);
            let norm = d.norm();
            for i in (q + 1..n).rev() {
                let (a, b) = (d[i - 1], d[i]);
                if b == 0.0 {
                    continue;
                }
                let h = a.hypot(b);
                d[i - 1] = h;
                d[i] = 0.0;
                rotate_columns(&mut j, i - 1, i, a / h, b / h);
            }
            if d[q].abs() <= 1e-10 * norm {
                // Dependent on the constraints already taken.
                continue;
            }
            for i in 0..=q {
                r[(i, q)] = d[i];
            }
            active.push(entry);
        }
        let q = active.len();
        let x0 = DVector::from_column_slice(&self.x0);
        // Rᵀv = b - Nᵀx₀, x = x₀ + J₁v, u = R⁻¹v.
        let mut v = vec![0.0; q];
        for i in 0..q {
            let mut s = active[i].rhs - active[i].normal.dot(&x0);
            for k in 0..i {
                s -= r[(k, i)] * v[k];
            }
            v[i] = s / r[(i, i)];
        }
        let mut u = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = v[i];
            for c in i + 1..q {
                s -= r[(i, c)] * u[c];
            }
            u[i] = s / r[(i, i)];
        }
        let umax = u.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        for (e, m) in active.iter().zip(u.iter_mut()) {
            if !e.equality && *m < 0.0 {
                if *m < -1e-9 * umax {
                    return None;
                }
                *m = 0.0;
            }
        }
        let x = x0 + j.columns(0, q) * DVector::from_column_slice(&v);
        Some((x, j, r, active, u))
    }

    pub(super) fn solve(
        &self,
        qp: &QpProblem,
        lower: &[f64],
        upper: &[f64],
        warm: Option<&WorkingSet>,
    ) -> Result<QpSolution, QpError> {
        let n = qp.dim();
        let (mut x, mut j, mut r, mut active, mut u) = warm
            .and_then(|w| self.warm_state(qp, lower, upper, w))
            .unwrap_or_else(|| {
                (
                    DVector::from_column_slice(&self.x0),
                    self.j0.clone(),
                    DMatrix::zeros(n, n),
                    Vec::new(),
                    Vec::new(),
                )
            });
        // Bound `j` is in the active set; blocks re-selection.
        let mut bound_in = vec![false; n];
        let mut fixed_in = vec![false; n];
        for e in &active {
            match e.con {
                Con::Lower(k) | Con::Upper(k) => bound_in[k] = true,
                Con::Fixed(k) => fixed_in[k] = true,
                _ => {}
            }
        }
        let mut pending = (0..n).filter(|&k| lower[k] == upper[k] && !fixed_in[k]);
        let max_iter = 20 * (2 * n + qp.rows.nrows() + 10) + 50 * qp.groups.len();
        let mut iterations = 0usize;

        'outer: loop {
            let mut entry = match pending.next() {
                Some(k) => Self::entry(qp, Con::Fixed(k), lower, upper),
                None => match Self::most_violated(qp, lower, upper, x.as_slice(), &bound_in) {
                    Some(con) => Self::entry(qp, con, lower, upper),
                    None => break,
                },
            };
            if entry.equality && entry.normal.dot(&x) > entry.rhs {
                entry.normal = -&entry.normal;
                entry.rhs = -entry.rhs;
            }
            let mut uplus = u.clone();
            uplus.push(0.0);
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(QpError::Degenerate {
                        iterations,
                        detail: format!("dual active set did not settle; {} active", active.len()),
                    });
                }
                let q = active.len();
                let mut d = j.tr_mul(&entry.normal);
                let step = j.columns(q, n - q) * d.rows(q, n - q);
                let mut rr = vec![0.0; q];
                for i in (0..q).rev() {
                    let mut s = d[i];
                    for c in i + 1..q {
                        s -= r[(i, c)] * rr[c];
                    }
                    rr[i] = s / r[(i, i)];
                }
                let s = entry.normal.dot(&x) - entry.rhs;
                let curv = d.rows(q, n - q).norm_squared();
                let full = curv > 1e-14 * d.norm_squared() && curv > 0.0;
                let t2 = if full {
                    (-s / curv).max(0.0)
                } else {
                    f64::INFINITY
                };
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for k in 0..q {
                    if !active[k].equality && rr[k] > 0.0 {
                        let t = uplus[k] / rr[k];
                        if t < t1 {
                            t1 = t;
                            drop = Some(k);
                        }
                    }
                }
                let t = t1.min(t2);
                if !t.is_finite() {
                    if s.abs() <= 1e-11 * entry.rhs.abs().max(1.0) {
                        // Redundant with the active set.
                        continue 'outer;
                    }
                    return Err(QpError::Infeasible {
                        residual: -s / entry.rhs.abs().max(1.0),
                    });
                }
                for k in 0..q {
                    uplus[k] -= t * rr[k];
                }
                uplus[q] += t;
                if full {
                    x.axpy(t, &step, 1.0);
                }
                if full && t2 <= t1 {
                    for i in (q + 1..n).rev() {
                        let (a, b) = (d[i - 1], d[i]);
                        if b == 0.0 {
                            continue;
                        }
                        let h = a.hypot(b);
                        d[i - 1] = h;
                        d[i] = 0.0;
                        rotate_columns(&mut j, i - 1, i, a / h, b / h);
                    }
                    for i in 0..=q {
                        r[(i, q)] = d[i];
                    }
                    if let Con::Lower(k) | Con::Upper(k) = entry.con {
                        bound_in[k] = true;
                    }
                    active.push(entry);
                    u = uplus;
                    continue 'outer;
                }
                let k = drop.expect("finite partial step has a blocking multiplier");
                let gone = active.remove(k);
                if let Con::Lower(b) | Con::Upper(b) = gone.con {
                    bound_in[b] = false;
                }
                uplus.remove(k);
                self.downdate(&mut r, &mut j, k, q);
            }
        }

        let z: Vec<f64> = x.iter().copied().collect();
        let grad = &qp.hessian * &x + &qp.gradient;
        let mut resid = grad.clone();
        for (e, &m) in active.iter().zip(&u) {
            resid.axpy(-m, &e.normal, 1.0);
        }
        let scale = qp.scale();
        let dual = active
            .iter()
            .zip(&u)
            .filter(|(e, _)| !e.equality)
            .map(|(_, &m)| (-m).max(0.0))
            .fold(0.0, f64::max);
        let comp = active
            .iter()
            .map(|e| (e.normal.dot(&x) - e.rhs).abs() / e.rhs.abs().max(1.0))
            .fold(0.0, f64::max);
        let kkt = (resid.amax() / scale)
            .max(dual / scale)
            .max(comp)
            .max(qp.violation_within(&z, lower, upper));

        let mut working = WorkingSet::empty(n);
        for e in active {
            match e.con {
                Con::Lower(k) | Con::Fixed(k) => working.bounds[k] = BoundState::Lower,
                Con::Upper(k) => working.bounds[k] = BoundState::Upper,
                Con::Row(row) => working.active.push(Active::Row(row)),
                Con::Cut(cut) => working.active.push(Active::Cut(cut)),
                Con::Facet { group, sigma } => working.active.push(Active::Facet { group, sigma }),
            }
        }
        Ok(QpSolution {
            objective: qp.objective(&z),
            z,
            iterations,
            kkt_residual: kkt,
            working,
        })
    }

    /// Removes column `k` of the `q`-column factor `R` and restores its
    /// triangular shape, rotating `J` alongside.
    fn downdate(&self, r: &mut DMatrix<f64>, j: &mut DMatrix<f64>, k: usize, q: usize) {
        for col in k..q - 1 {
            for row in 0..=col + 1 {
                r[(row, col)] = r[(row, col + 1)];
            }
        }
        for row in 0..q {
            r[(row, q - 1)] = 0.0;
        }
        for i in k..q.saturating_sub(1) {
            let (a, b) = (r[(i, i)], r[(i + 1, i)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in i..q - 1 {
                let (x, y) = (r[(i, col)], r[(i + 1, col)]);
                r[(i, col)] = c * x + s * y;
                r[(i + 1, col)] = c * y - s * x;
            }
            r[(i + 1, i)] = 0.0;
            rotate_columns(j, i, i + 1, c, s);
        }
    }
}
