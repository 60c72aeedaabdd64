//! Branch-and-bound over the convex QP relaxation of the reduced program,
//! and an enumerating oracle over schedules.

mod bnb;
mod brute;
mod dual;
mod miqp;
mod qp;

pub use bnb::{
    branch_and_bound, solve_binary_qp, BinarySolution, SolveStatus, SolverOptions, FEASIBILITY_TOL,
    INTEGRALITY_TOL,
};
pub use brute::{
    brute_force_schedule_search, schedule_space_size, BruteForceError, BruteForceResult,
    BRUTE_FORCE_LIMIT,
};
pub use miqp::{solve_miqp, MiqpSolution};
pub use qp::{
    solve_qp, solve_qp_within, AbsGroup, AbsTerm, QpError, QpProblem, QpSolution, WorkingSet,
};
