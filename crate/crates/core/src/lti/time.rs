//! Exact sample-index arithmetic.
//!
//! Times are converted to integer microseconds before any ceiling is taken,
//! so `⌈1.8 / 0.01⌉` is 180 and never 181.

use crate::lti::LtiError;

const MICROS_PER_SECOND: f64 = 1_000_000.0;

/// Uniform sampling grid with period `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeGrid {
    period_us: i64,
}

impl TimeGrid {
    pub fn new(period: f64) -> Result<Self, LtiError> {
        if !period.is_finite() || period <= 0.0 {
            return Err(LtiError::InvalidParameter {
                name: "h",
                reason: format!("sampling period must be positive and finite, got {period}"),
            });
        }
        let period_us = to_micros(period);
        if period_us <= 0 {
            return Err(LtiError::InvalidParameter {
                name: "h",
                reason: format!("sampling period {period} s is below one microsecond"),
            });
        }
        Ok(Self { period_us })
    }

    pub fn period(&self) -> f64 {
        self.period_us as f64 / MICROS_PER_SECOND
    }

    pub fn period_micros(&self) -> i64 {
        self.period_us
    }

    /// `⌈t / h⌉` in exact integer arithmetic.
    pub fn ceil_samples(&self, t: f64) -> i64 {
        ceil_div(to_micros(t), self.period_us)
    }

    /// Horizon sample count `N = ⌈T / h⌉`.
    pub fn horizon_samples(&self, horizon: f64) -> usize {
        self.ceil_samples(horizon).max(0) as usize
    }

    pub fn time_of(&self, sample: usize) -> f64 {
        (sample as i64 * self.period_us) as f64 / MICROS_PER_SECOND
    }
}

/// Rounds seconds to the nearest integer microsecond.
pub fn to_micros(t: f64) -> i64 {
    (t * MICROS_PER_SECOND).round() as i64
}

/// Ceiling division for a positive divisor.
pub fn ceil_div(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    if num.rem_euclid(den) == 0 {
        q
    } else {
        q + 1
    }
}
