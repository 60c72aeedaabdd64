//! Optimal precision-switching schedules for discrete-time feedback
//! controllers.

pub mod config;
pub mod intervals;
pub mod io;
pub mod lti;
pub mod model;
pub mod precision;
pub mod schedule;
pub mod solver;
