use nalgebra::{DMatrix, DVector};

use super::{MiqpProblem, ModelError, RowRole, Sense, VarId, VarKind};

/// A switch bit after presolve: a reduced variable or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Free(usize),
    Const(f64),
}

impl Operand {
    pub fn value(&self, z: &[f64]) -> f64 {
        match *self {
            Operand::Free(k) => z[k],
            Operand::Const(v) => v,
        }
    }
}

/// `|a - b|`, the relaxed XOR of two switch bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvTerm {
    pub a: Operand,
    pub b: Operand,
    /// Variable `χ` this term replaces.
    pub xor: VarId,
}

impl TvTerm {
    pub fn diff(&self, z: &[f64]) -> f64 {
        self.a.value(z) - self.b.value(z)
    }
}

/// `Σ |a_t - b_t| ≤ budget`: a window budget with its XOR bits eliminated.
#[derive(Debug, Clone, PartialEq)]
pub struct TvGroup {
    pub window: usize,
    pub terms: Vec<TvTerm>,
    pub budget: f64,
    pub row: usize,
}

impl TvGroup {
    pub fn total(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.diff(z).abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedVar {
    pub origin: VarId,
    pub binary: bool,
    pub lower: f64,
    pub upper: f64,
}

/// Source row of a reduced inequality; `flipped` for `≥` rows negated to `≤`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowOrigin {
    pub row: usize,
    pub flipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mapping {
    Reduced(usize),
    Fixed(f64),
    Defined(usize),
    Xor(VarId, VarId),
    Unused,
}

/// Dense QP over the free variables:
/// `min ½ zᵀHz + gᵀz + c` subject to bounds, `G z ≤ h` and the groups.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub vars: Vec<ReducedVar>,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub row_origin: Vec<RowOrigin>,
    pub groups: Vec<TvGroup>,
    mapping: Vec<Mapping>,
    definitions: Vec<usize>,
}

impl ReducedProblem {
    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn free_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.binary).count()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        0.5 * z.dot(&(&self.hessian * &z)) + self.gradient.dot(&z) + self.constant
    }

    pub fn objective_gradient(&self, z: &[f64]) -> DVector<f64> {
        &self.hessian * DVector::from_column_slice(z) + &self.gradient
    }

    /// Largest violation of bounds, rows and groups, scaled per row by
    /// `max(1, |h|)`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        let act = &self.rows * &zv;
        let rows = (0..self.rows.nrows())
            .map(|r| (act[r] - self.rhs[r]).max(0.0) / self.rhs[r].abs().max(1.0))
            .fold(0.0, f64::max);
        let groups = self
            .groups
            .iter()
            .map(|g| (g.total(z) - g.budget).max(0.0))
            .fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(z)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0))
            .fold(0.0, f64::max);
        rows.max(groups).max(bounds)
    }

    /// Value of an original switch bit as an operand over `z`.
    pub fn operand_of(&self, var: VarId) -> Option<Operand> {
        match self.mapping.get(var)? {
            Mapping::Reduced(k) => Some(Operand::Free(*k)),
            Mapping::Fixed(v) => Some(Operand::Const(*v)),
            _ => None,
        }
    }

    /// Full assignment of the original problem, evaluated row by row.
    pub fn expand(&self, p: &MiqpProblem, z: &[f64]) -> Vec<f64> {
        let mut values = vec![0.0; p.variables.len()];
        for (var, map) in self.mapping.iter().enumerate() {
            match *map {
                Mapping::Reduced(k) => values[var] = z[k],
                Mapping::Fixed(v) => values[var] = v,
                _ => {}
            }
        }
        for &row in &self.definitions {
            let c = &p.constraints[row];
            let target = c.defines.unwrap();
            let mut coef = 0.0;
            let mut acc = c.rhs;
            for &(v, k) in &c.terms {
                if v == target {
                    coef += k;
                } else {
                    acc -= k * values[v];
                }
            }
            values[target] = acc / coef;
        }
        for (var, map) in self.mapping.iter().enumerate() {
            if let Mapping::Xor(a, b) = *map {
                values[var] = (values[a] - values[b]).abs();
            }
        }
        values
    }

    /// Reduced coordinates of a full assignment.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.vars.iter().map(|v| values[v.origin]).collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn row_name(p: &MiqpProblem, row: usize) -> String {
    format!("row {row} ({})", p.constraints[row].role)
}

/// Eliminates fixed and chained switch bits, substitutes every defined
/// variable, replaces XOR bits by `|sw_i - sw_{i-1}|` in the window budgets
/// and drops rows that hold everywhere on the box.
pub fn presolve(p: &MiqpProblem) -> Result<ReducedProblem, ModelError> {
    p.validate()?;
    let nv = p.variables.len();
    let mut uf = UnionFind::new(nv);
    let mut fixed: Vec<Option<f64>> = p
        .variables
        .iter()
        .map(|v| (v.lower == v.upper).then_some(v.lower))
        .collect();
    let mut defined_by: Vec<Option<usize>> = vec![None; nv];
    let mut xor_pair: Vec<Option<(VarId, VarId)>> = vec![None; nv];
    let mut consumed = vec![false; p.constraints.len()];

    for (idx, c) in p.constraints.iter().enumerate() {
        match c.role {
            RowRole::Freeze { .. } => {
                let shape_ok = c.sense == Sense::Eq
                    && c.rhs == 0.0
                    && c.terms.len() == 2
                    && c.terms[0].1 == -c.terms[1].1
                    && c.terms[0].1 != 0.0;
                if !shape_ok {
                    return Err(ModelError::Unsupported(row_name(p, idx)));
                }
                uf.union(c.terms[0].0, c.terms[1].0);
                consumed[idx] = true;
            }
            RowRole::InitialHi { .. } => {
                if c.sense != Sense::Eq || c.terms.len() != 1 || c.terms[0].1 == 0.0 {
                    return Err(ModelError::Unsupported(row_name(p, idx)));
                }
                let (v, k) = c.terms[0];
                let val = c.rhs / k;
                if let Some(prev) = fixed[v] {
                    if prev != val {
                        return Err(ModelError::InfeasibleAtPresolve(format!(
                            "{} fixed to both {prev} and {val}",
                            p.variables[v].kind
                        )));
                    }
                }
                fixed[v] = Some(val);
                consumed[idx] = true;
            }
            RowRole::Definition => {
                let target = c
                    .defines
                    .ok_or_else(|| ModelError::Unsupported(row_name(p, idx)))?;
                if defined_by[target].is_some() || p.variables[target].binary {
                    return Err(ModelError::Unsupported(row_name(p, idx)));
                }
                defined_by[target] = Some(idx);
                consumed[idx] = true;
            }
            RowRole::Xor { .. } => {
                let chi = c
                    .terms
                    .iter()
                    .find(|t| matches!(p.variables[t.0].kind, VarKind::Xor(_)))
                    .map(|t| t.0)
                    .ok_or_else(|| ModelError::Unsupported(row_name(p, idx)))?;
                if xor_pair[chi].is_none() {
                    let a = c
                        .terms
                        .iter()
                        .find(|t| t.0 != chi && t.1 < 0.0)
                        .map(|t| t.0);
                    let b = c
                        .terms
                        .iter()
                        .find(|t| t.0 != chi && t.1 > 0.0)
                        .map(|t| t.0);
                    match (a, b) {
                        (Some(a), Some(b)) => xor_pair[chi] = Some((a, b)),
                        _ => return Err(ModelError::Unsupported(row_name(p, idx))),
                    }
                }
                consumed[idx] = true;
            }
            _ => {}
        }
    }

    // Propagate fixings through the equality classes.
    let mut class_value: Vec<Option<f64>> = vec![None; nv];
    for v in 0..nv {
        if let Some(val) = fixed[v] {
            let r = uf.find(v);
            match class_value[r] {
                Some(prev) if prev != val => {
                    return Err(ModelError::InfeasibleAtPresolve(format!(
                        "{} is chained to values {prev} and {val}",
                        p.variables[v].kind
                    )))
                }
                _ => class_value[r] = Some(val),
            }
        }
    }

    let mut mapping = vec![Mapping::Unused; nv];
    let mut vars: Vec<ReducedVar> = Vec::new();
    let mut class_slot: Vec<Option<usize>> = vec![None; nv];
    let is_xor = |v: VarId| matches!(p.variables[v].kind, VarKind::Xor(_));
    for v in 0..nv {
        if !p.variables[v].binary || is_xor(v) {
            continue;
        }
        let r = uf.find(v);
        mapping[v] = match class_value[r] {
            Some(val) => {
                if val != 0.0 && val != 1.0 {
                    return Err(ModelError::InfeasibleAtPresolve(format!(
                        "binary {} fixed to {val}",
                        p.variables[v].kind
                    )));
                }
                Mapping::Fixed(val)
            }
            None => {
                let slot = *class_slot[r].get_or_insert_with(|| {
                    vars.push(ReducedVar {
                        origin: v,
                        binary: true,
                        lower: 0.0,
                        upper: 1.0,
                    });
                    vars.len() - 1
                });
                Mapping::Reduced(slot)
            }
        };
    }
    for v in 0..nv {
        if is_xor(v) {
            mapping[v] = match xor_pair[v] {
                Some((a, b)) => Mapping::Xor(a, b),
                None => Mapping::Unused,
            };
            continue;
        }
        if p.variables[v].binary {
            continue;
        }
        mapping[v] = match (defined_by[v], fixed[v]) {
            (Some(row), _) => Mapping::Defined(row),
            (None, Some(val)) => Mapping::Fixed(val),
            (None, None) => {
                let var = &p.variables[v];
                vars.push(ReducedVar {
                    origin: v,
                    binary: false,
                    lower: var.lower,
                    upper: var.upper,
                });
                Mapping::Reduced(vars.len() - 1)
            }
        };
    }
    let nz = vars.len();

    // Affine expressions `coefs · z + constant`, stored with the constant last.
    let mut expr: Vec<Option<Vec<f64>>> = vec![None; nv];
    for v in 0..nv {
        match mapping[v] {
            Mapping::Reduced(k) => {
                let mut e = vec![0.0; nz + 1];
                e[k] = 1.0;
                expr[v] = Some(e);
            }
            Mapping::Fixed(val) => {
                let mut e = vec![0.0; nz + 1];
                e[nz] = val;
                expr[v] = Some(e);
            }
            _ => {}
        }
    }
    let mut definitions = Vec::new();
    for (idx, c) in p.constraints.iter().enumerate() {
        if c.role != RowRole::Definition {
            continue;
        }
        let target = c.defines.unwrap();
        let mut acc = vec![0.0; nz + 1];
        acc[nz] = c.rhs;
        let mut coef = 0.0;
        for &(v, k) in &c.terms {
            if v == target {
                coef += k;
                continue;
            }
            let e = expr[v].as_ref().ok_or_else(|| {
                ModelError::Unsupported(format!(
                    "{} uses {} before it is defined",
                    row_name(p, idx),
                    p.variables[v].kind
                ))
            })?;
            for (a, b) in acc.iter_mut().zip(e) {
                *a -= k * b;
            }
        }
        if coef == 0.0 {
            return Err(ModelError::Unsupported(row_name(p, idx)));
        }
        acc.iter_mut().for_each(|a| *a /= coef);
        expr[target] = Some(acc);
        definitions.push(idx);
    }
    let expr_of = |v: VarId| -> Result<&Vec<f64>, ModelError> {
        expr[v].as_ref().ok_or_else(|| {
            ModelError::Unsupported(format!(
                "{} outside its XOR gadget and budget",
                p.variables[v].kind
            ))
        })
    };

    // Objective.
    let mut gradient = DVector::zeros(nz);
    let mut constant = p.objective.constant;
    for &(v, k) in &p.objective.linear {
        let e = expr_of(v)?;
        for j in 0..nz {
            gradient[j] += k * e[j];
        }
        constant += k * e[nz];
    }
    let mut local = vec![usize::MAX; nv];
    let mut used: Vec<VarId> = Vec::new();
    for &(a, b, _) in &p.objective.quadratic {
        for v in [a, b] {
            if local[v] == usize::MAX {
                local[v] = used.len();
                used.push(v);
            }
        }
    }
    let mut hessian = DMatrix::zeros(nz, nz);
    if !used.is_empty() {
        let mut pm = DMatrix::zeros(used.len(), nz);
        let mut p0 = DVector::zeros(used.len());
        for (r, &v) in used.iter().enumerate() {
            let e = expr_of(v)?;
            for j in 0..nz {
                pm[(r, j)] = e[j];
            }
            p0[r] = e[nz];
        }
        let mut mm = DMatrix::zeros(used.len(), nz);
        for &(a, b, q) in &p.objective.quadratic {
            let (ra, rb) = (local[a], local[b]);
            for j in 0..nz {
                mm[(ra, j)] += q * pm[(rb, j)];
                mm[(rb, j)] += q * pm[(ra, j)];
            }
            constant += q * p0[ra] * p0[rb];
        }
        hessian = pm.transpose() * &mm;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        gradient += mm.transpose() * &p0;
    }

    // Remaining rows.
    let mut dense_rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut row_origin = Vec::new();
    let mut groups = Vec::new();
    for (idx, c) in p.constraints.iter().enumerate() {
        if consumed[idx] {
            continue;
        }
        if let RowRole::WindowBudget { window } = c.role {
            if c.sense != Sense::Le || c.terms.iter().any(|&(v, k)| k != 1.0 || !is_xor(v)) {
                return Err(ModelError::Unsupported(row_name(p, idx)));
            }
            let mut budget = c.rhs;
            let mut terms = Vec::new();
            for &(chi, _) in &c.terms {
                let Mapping::Xor(a, b) = mapping[chi] else {
                    return Err(ModelError::Unsupported(row_name(p, idx)));
                };
                let (oa, ob) = (operand(&mapping, a), operand(&mapping, b));
                match (oa, ob) {
                    (Some(Operand::Const(x)), Some(Operand::Const(y))) => budget -= (x - y).abs(),
                    (Some(Operand::Free(x)), Some(Operand::Free(y))) if x == y => {}
                    (Some(a), Some(b)) => terms.push(TvTerm { a, b, xor: chi }),
                    _ => return Err(ModelError::Unsupported(row_name(p, idx))),
                }
            }
            if budget < -1e-12 {
                return Err(ModelError::InfeasibleAtPresolve(format!(
                    "{} needs more switches than allowed",
                    row_name(p, idx)
                )));
            }
            if !terms.is_empty() {
                groups.push(TvGroup {
                    window,
                    terms,
                    budget: budget.max(0.0),
                    row: idx,
                });
            }
            continue;
        }
        let mut a = vec![0.0; nz];
        let mut b = c.rhs;
        for &(v, k) in &c.terms {
            let e = expr_of(v)?;
            for j in 0..nz {
                a[j] += k * e[j];
            }
            b -= k * e[nz];
        }
        let sides: &[bool] = match c.sense {
            Sense::Le => &[false],
            Sense::Ge => &[true],
            Sense::Eq => &[false, true],
        };
        for &flip in sides {
            let s = if flip { -1.0 } else { 1.0 };
            let row: Vec<f64> = a.iter().map(|x| s * x).collect();
            let r = s * b;
            let (lo, hi) = box_range(&row, &vars);
            let scale = r
                .abs()
                .max(1.0)
                .max(row.iter().map(|x| x.abs()).sum::<f64>());
            if lo > r + 1e-9 * scale {
                return Err(ModelError::InfeasibleAtPresolve(format!(
                    "{} cannot hold for any schedule (minimum excess {:.6e})",
                    row_name(p, idx),
                    lo - r
                )));
            }
            if hi <= r {
                continue;
            }
            dense_rows.push(row);
            rhs.push(r);
            row_origin.push(RowOrigin {
                row: idx,
                flipped: flip,
            });
        }
    }
    let rows = DMatrix::from_fn(dense_rows.len(), nz, |r, c| dense_rows[r][c]);
    Ok(ReducedProblem {
        vars,
        hessian,
        gradient,
        constant,
        rows,
        rhs: DVector::from_vec(rhs),
        row_origin,
        groups,
        mapping,
        definitions,
    })
}

fn operand(mapping: &[Mapping], v: VarId) -> Option<Operand> {
    match mapping[v] {
        Mapping::Reduced(k) => Some(Operand::Free(k)),
        Mapping::Fixed(x) => Some(Operand::Const(x)),
        _ => None,
    }
}

/// Range of `a·z` over the variable box.
fn box_range(a: &[f64], vars: &[ReducedVar]) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (k, v) in a.iter().zip(vars) {
        if *k == 0.0 {
            continue;
        }
        let (p, q) = (k * v.lower, k * v.upper);
        lo += p.min(q);
        hi += p.max(q);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervals::SwitchingWindows;
    use crate::lti::{Band, ScenarioSpec, Step, SystemSpec};
    use crate::model::{build_schedule_program, Constraint, ModelOptions, ScheduleEvaluator};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn setup(band: f64) -> (SystemSpec, ScenarioSpec) {
        let sys = SystemSpec::new(scalar(0.6), scalar(0.5), scalar(1.0), scalar(-0.3), 1.0)
            .unwrap()
            .with_weights(scalar(2.0), scalar(0.5))
            .unwrap();
        let scen = ScenarioSpec {
            steps: vec![Step::scalar(0.0, 1.0), Step::scalar(5.0, 2.0)],
            band: Band::Absolute(band),
            settling_time: 3.0,
            horizon: 10.0,
            runtime_lo: 1.0,
            runtime_hi: 2.0,
            error_lo: 0.3,
            error_hi: 0.01,
        };
        (sys, scen)
    }

    #[test]
    fn no_windows_leaves_no_free_binaries() {
        let (sys, scen) = setup(10.0);
        let p = build_schedule_program(
            &sys,
            &scen,
            &SwitchingWindows::empty(),
            &ModelOptions::default(),
        )
        .unwrap();
        let red = presolve(&p).unwrap();
        assert_eq!(red.dim(), 0);
        let values = red.expand(&p, &[]);
        assert!(p.max_violation(&values) < 1e-12);
        let ev = ScheduleEvaluator::new(&sys, &scen, ModelOptions::default()).unwrap();
        let all_hi = ev.objective(&[1.0; 11]).total;
        assert_relative_eq!(red.objective(&[]), all_hi, max_relative = 1e-12);
        assert_relative_eq!(p.objective.value(&values), all_hi, max_relative = 1e-12);
    }

    #[test]
    fn free_binaries_are_window_samples() {
        let (sys, scen) = setup(10.0);
        let w = SwitchingWindows::new(vec![(2, 4), (6, 7)]);
        let p = build_schedule_program(&sys, &scen, &w, &ModelOptions::default()).unwrap();
        let red = presolve(&p).unwrap();
        assert_eq!(red.free_binaries(), 5);
        assert_eq!(red.groups.len(), 2);
        assert_eq!(red.groups[0].terms.len(), 3);
        // sw_1 = 1 is fixed, so the first term compares sw_2 with a constant
        assert_eq!(red.groups[0].terms[0].b, Operand::Const(1.0));
        assert!(
            red.rows.nrows() == 0,
            "a wide band makes every band row redundant"
        );
    }

    #[test]
    fn reduced_objective_matches_direct_evaluation() {
        let (sys, scen) = setup(0.8);
        let w = SwitchingWindows::new(vec![(2, 4), (6, 7)]);
        let opts = ModelOptions {
            w_runtime: 0.7,
            w_cost: 1.3,
            ..Default::default()
        };
        let p = build_schedule_program(&sys, &scen, &w, &opts).unwrap();
        let red = presolve(&p).unwrap();
        let ev = ScheduleEvaluator::new(&sys, &scen, opts).unwrap();
        for z in [[0.0, 0.3, 1.0, 0.5, 0.2], [1.0; 5], [0.0; 5]] {
            let full = red.expand(&p, &z);
            let sw: Vec<f64> = (0..=10)
                .map(|i| full[p.find(VarKind::Switch(i)).unwrap()])
                .collect();
            let direct = ev.objective(&sw).total;
            assert_relative_eq!(red.objective(&z), direct, max_relative = 1e-11);
            assert_relative_eq!(p.objective.value(&full), direct, max_relative = 1e-11);
            let eq_residual = p
                .constraints
                .iter()
                .filter(|c| c.sense == Sense::Eq && !matches!(c.role, RowRole::Freeze { .. }))
                .map(|c| c.violation(&full))
                .fold(0.0, f64::max);
            assert!(eq_residual < 1e-12);
        }
    }

    #[test]
    fn contradictory_fixings_are_infeasible() {
        let mut p = MiqpProblem::default();
        let a = p.add_variable(VarKind::Switch(0), true, 0.0, 1.0);
        let b = p.add_variable(VarKind::Switch(1), true, 0.0, 1.0);
        let fix = |v, val, sample| Constraint {
            terms: vec![(v, 1.0)],
            sense: Sense::Eq,
            rhs: val,
            role: RowRole::InitialHi { sample },
            defines: None,
        };
        p.add_constraint(fix(a, 1.0, 0));
        p.add_constraint(fix(b, 0.0, 1));
        p.add_constraint(Constraint {
            terms: vec![(b, 1.0), (a, -1.0)],
            sense: Sense::Eq,
            rhs: 0.0,
            role: RowRole::Freeze {
                sample: 1,
                anchor: 0,
            },
            defines: None,
        });
        assert!(matches!(
            presolve(&p),
            Err(ModelError::InfeasibleAtPresolve(_))
        ));
    }

    #[test]
    fn empty_constraint_set_is_unchanged() {
        let mut p = MiqpProblem::default();
        let a = p.add_variable(VarKind::Other(0), true, 0.0, 1.0);
        let b = p.add_variable(VarKind::Other(1), true, 0.0, 1.0);
        let c = p.add_variable(VarKind::Other(2), false, -2.0, 2.0);
        p.objective.quadratic = vec![(a, a, 1.0), (c, c, 2.0), (a, b, 0.5)];
        p.objective.linear = vec![(b, -1.0)];
        let red = presolve(&p).unwrap();
        assert_eq!(red.dim(), 3);
        assert_eq!(red.rows.nrows(), 0);
        assert!(red.groups.is_empty());
        let z = [0.3, 0.7, -1.1];
        assert_relative_eq!(
            red.objective(&z),
            p.objective.value(&z),
            max_relative = 1e-14
        );
    }

    #[test]
    fn band_outside_reach_is_infeasible() {
        let (sys, mut scen) = setup(0.8);
        scen.steps[1].reference[0] = 1e6;
        let w = SwitchingWindows::new(vec![(2, 4)]);
        let p = build_schedule_program(&sys, &scen, &w, &ModelOptions::default()).unwrap();
        assert!(matches!(
            presolve(&p),
            Err(ModelError::InfeasibleAtPresolve(_))
        ));
    }
}
