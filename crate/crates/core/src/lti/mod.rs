//! Discrete-time LTI plants under logical-execution-time feedback.
//!
//! The closed loop is
//!
//! ```text
//! x[k+1] = A x[k] + B u[k]
//! u[k]   = u_ss + K (x[k-1] - x_ss)
//! y[k]   = C x[k]
//! ```
//!
//! where `(x_ss, u_ss)` is the steady state of the reference active at
//! sample `k`.

mod metrics;
mod plan;
mod sim;
mod system;
mod time;

pub use metrics::{
    check_settling, lqr_cost, lqr_cost_deviation, stage_costs, time_domain_metrics, BandViolation,
    LqrCost, SettlingReport, TimingMetrics,
};
pub use plan::{BandSpan, ReferencePlan, Setpoint};
pub use sim::{
    simulate_closed_loop, simulate_injected, simulate_nominal, Arithmetic, Exact, Injected,
    Trajectory,
};
pub use system::{dlqr, Band, ScenarioSpec, Step, SystemSpec};
pub use time::{ceil_div, to_micros, TimeGrid};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtiError {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("untrackable reference at step {step}: steady-state residual {residual:.3e}")]
    Untrackable { step: usize, residual: f64 },
    #[error("output does not settle within the {horizon} s horizon")]
    Unsettled { horizon: f64 },
    #[error("Riccati iteration did not converge after {iterations} iterations")]
    RiccatiDiverged { iterations: usize },
}

pub(crate) fn shape_of(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}
