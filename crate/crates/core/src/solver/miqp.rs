use super::bnb::{branch_and_bound, SolveStatus, SolverOptions};
use crate::model::{presolve, MiqpProblem, ModelError};

#[derive(Debug, Clone)]
pub struct MiqpSolution {
    pub status: SolveStatus,
    /// Value of every model variable at the incumbent.
    pub assignment: Option<Vec<f64>>,
    pub objective: f64,
    /// Proven lower bound; never above `objective`.
    pub lower_bound: f64,
    pub gap: f64,
    pub nodes: u64,
    /// Largest absolute constraint residual of `assignment`.
    pub max_residual: f64,
    /// Free binaries left after presolve.
    pub free_binaries: usize,
    pub root_kkt: Option<f64>,
    pub qp_failures: u64,
}

impl MiqpSolution {
    fn infeasible() -> Self {
        Self {
            status: SolveStatus::Infeasible,
            assignment: None,
            objective: f64::INFINITY,
            lower_bound: f64::INFINITY,
            gap: f64::INFINITY,
            nodes: 0,
            max_residual: f64::NAN,
            free_binaries: 0,
            root_kkt: None,
            qp_failures: 0,
        }
    }
}

/// Presolves `p`, runs branch-and-bound on the reduced problem and expands
/// the incumbent back to every variable.
pub fn solve_miqp(p: &MiqpProblem, options: SolverOptions) -> Result<MiqpSolution, ModelError> {
    let red = match presolve(p) {
        Ok(red) => red,
        Err(ModelError::InfeasibleAtPresolve(_)) => return Ok(MiqpSolution::infeasible()),
        Err(e) => return Err(e),
    };
    let sol = branch_and_bound(&red, options);
    let assignment = sol.z.as_ref().map(|z| red.expand(p, z));
    let max_residual = assignment.as_ref().map_or(f64::NAN, |a| p.max_violation(a));
    Ok(MiqpSolution {
        status: sol.status,
        assignment,
        objective: sol.objective,
        lower_bound: sol.lower_bound,
        gap: sol.gap,
        nodes: sol.nodes,
        max_residual,
        free_binaries: red.free_binaries(),
        root_kkt: sol.root_kkt,
        qp_failures: sol.qp_failures,
    })
}
