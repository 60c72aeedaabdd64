//! Mixed-integer quadratic program of the precision-switching problem.
//!
//! Variables are the switch bits `sw_i` (1 = high precision), one XOR bit
//! `χ_i` per in-window sample, the injected error `e_i` and the trajectory
//! `x_i`, `u_i`, `y_i`. All constraints are linear; the objective is
//! `w1 z1 + w2 z2` with `z1` the modeled runtime and `z2` the LQR cost.

mod build;
mod eval;
mod export;
mod presolve;

pub use build::{build_schedule_program, encode_xor, CostMode, ErrorMode, ModelOptions};
pub use eval::{ObjectiveParts, ScheduleEvaluator};
pub use export::write_plain_text;
pub use presolve::{presolve, Operand, ReducedProblem, ReducedVar, RowOrigin, TvGroup, TvTerm};

use std::fmt;

use thiserror::Error;

use crate::intervals::WindowDiagnostic;
use crate::lti::LtiError;

pub type VarId = usize;

/// What a variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Switch(usize),
    Xor(usize),
    Error(usize),
    State(usize, usize),
    Input(usize, usize),
    Output(usize, usize),
    Other(usize),
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            VarKind::Switch(i) => write!(f, "sw[{i}]"),
            VarKind::Xor(i) => write!(f, "chi[{i}]"),
            VarKind::Error(i) => write!(f, "e[{i}]"),
            VarKind::State(i, c) => write!(f, "x[{i}][{c}]"),
            VarKind::Input(i, c) => write!(f, "u[{i}][{c}]"),
            VarKind::Output(i, c) => write!(f, "y[{i}][{c}]"),
            VarKind::Other(i) => write!(f, "v[{i}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub kind: VarKind,
    pub binary: bool,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

/// Why a row exists. Presolve dispatches on this tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowRole {
    /// Defines the variable in `Constraint::defines` from earlier ones.
    Definition,
    Band {
        step: usize,
        sample: usize,
        output: usize,
    },
    /// Worst-case error tube around the band in symmetric error mode.
    Tube {
        step: usize,
        sample: usize,
        output: usize,
    },
    Xor {
        sample: usize,
    },
    WindowBudget {
        window: usize,
    },
    Freeze {
        sample: usize,
        anchor: usize,
    },
    InitialHi {
        sample: usize,
    },
    Generic,
}

impl fmt::Display for RowRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RowRole::Definition => write!(f, "def"),
            RowRole::Band {
                step,
                sample,
                output,
            } => write!(f, "band[{step}][{sample}][{output}]"),
            RowRole::Tube {
                step,
                sample,
                output,
            } => write!(f, "tube[{step}][{sample}][{output}]"),
            RowRole::Xor { sample } => write!(f, "xor[{sample}]"),
            RowRole::WindowBudget { window } => write!(f, "budget[{window}]"),
            RowRole::Freeze { sample, anchor } => write!(f, "freeze[{sample}<-{anchor}]"),
            RowRole::InitialHi { sample } => write!(f, "init_hi[{sample}]"),
            RowRole::Generic => write!(f, "row"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub role: RowRole,
    pub defines: Option<VarId>,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v]).sum()
    }

    /// Amount by which `values` violates this row; zero when satisfied.
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// `constant + Σ linear + Σ q v_i v_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub constant: f64,
    pub linear: Vec<(VarId, f64)>,
    pub quadratic: Vec<(VarId, VarId, f64)>,
}

impl Objective {
    pub fn value(&self, values: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|&(v, c)| c * values[v]).sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|&(i, j, q)| q * values[i] * values[j])
            .sum();
        self.constant + lin + quad
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiqpProblem {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
    /// Last sample index.
    pub horizon: usize,
    pub windows: Vec<(usize, usize)>,
}

impl MiqpProblem {
    pub fn add_variable(&mut self, kind: VarKind, binary: bool, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            kind,
            binary,
            lower,
            upper,
        });
        self.variables.len() - 1
    }

    pub fn add_constraint(&mut self, c: Constraint) -> usize {
        debug_assert!(c.terms.iter().all(|&(v, _)| v < self.variables.len()));
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    pub fn binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.binary).count()
    }

    pub fn count_rows(&self, pred: impl Fn(&RowRole) -> bool) -> usize {
        self.constraints.iter().filter(|c| pred(&c.role)).count()
    }

    pub fn find(&self, kind: VarKind) -> Option<VarId> {
        self.variables.iter().position(|v| v.kind == kind)
    }

    /// Largest row or bound violation, and integrality gap of binaries.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(values))
            .fold(0.0, f64::max);
        let bounds = self
            .variables
            .iter()
            .zip(values)
            .map(|(v, &x)| {
                let b = (v.lower - x).max(x - v.upper).max(0.0);
                if v.binary {
                    b.max((x - x.round()).abs())
                } else {
                    b
                }
            })
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Largest violation with each row scaled by `max(1, |rhs|, Σ|coef·value|)`.
    pub fn max_relative_violation(&self, values: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let scale = c
                    .terms
                    .iter()
                    .map(|&(v, k)| (k * values[v]).abs())
                    .fold(c.rhs.abs().max(1.0), f64::max);
                c.violation(values) / scale
            })
            .fold(0.0, f64::max)
    }

    /// Checks that every row and objective term references a declared variable.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.variables.len();
        for (idx, c) in self.constraints.iter().enumerate() {
            if c.terms.iter().any(|&(v, _)| v >= n) || c.defines.is_some_and(|v| v >= n) {
                return Err(ModelError::UndeclaredVariable { row: idx });
            }
        }
        let obj_ok = self.objective.linear.iter().all(|&(v, _)| v < n)
            && self
                .objective
                .quadratic
                .iter()
                .all(|&(i, j, _)| i < n && j < n);
        if !obj_ok {
            return Err(ModelError::UndeclaredVariable { row: usize::MAX });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid windows: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Windows(Vec<WindowDiagnostic>),
    #[error("row {row} references an undeclared variable")]
    UndeclaredVariable { row: usize },
    #[error("infeasible at presolve: {0}")]
    InfeasibleAtPresolve(String),
    #[error("presolve cannot handle {0}")]
    Unsupported(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
}
