use thiserror::Error;

use crate::intervals::SwitchingWindows;
use crate::lti::{LtiError, ScenarioSpec, SystemSpec};
use crate::model::{ModelOptions, ScheduleEvaluator};

/// Largest search space [`brute_force_schedule_search`] accepts.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BruteForceError {
    #[error("search space of {cardinality} schedules exceeds the limit of {limit}")]
    TooLarge { cardinality: u128, limit: u128 },
    #[error("window {window} [{lower},{upper}] is outside samples 1..={horizon}")]
    Window {
        window: usize,
        lower: usize,
        upper: usize,
        horizon: usize,
    },
    #[error(transparent)]
    Lti(#[from] LtiError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    /// Best feasible switch vector, `None` if no candidate is feasible.
    pub sw: Option<Vec<bool>>,
    pub objective: f64,
    pub candidates: u64,
    pub feasible: u64,
}

/// `Π_β (U_β - L_β + 2)`: per window, no toggle or one toggle per sample.
pub fn schedule_space_size(windows: &SwitchingWindows) -> u128 {
    windows.windows.iter().fold(1u128, |acc, &(l, u)| {
        acc.saturating_mul((u - l + 2) as u128)
    })
}

/// Enumerates every schedule that starts hi and toggles at most once in each
/// window, evaluating each one directly on the error-injected recursion.
/// Ties go to the schedule that is hi at the earliest differing sample.
pub fn brute_force_schedule_search(
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    windows: &SwitchingWindows,
    options: ModelOptions,
) -> Result<BruteForceResult, BruteForceError> {
    let ev = ScheduleEvaluator::new(sys, scen, options)?;
    let horizon = ev.horizon();
    let mut prev_upper = 0;
    for (idx, &(lower, upper)) in windows.windows.iter().enumerate() {
        if lower == 0 || lower > upper || upper > horizon || (idx > 0 && lower <= prev_upper) {
            return Err(BruteForceError::Window {
                window: idx + 1,
                lower,
                upper,
                horizon,
            });
        }
        prev_upper = upper;
    }
    let cardinality = schedule_space_size(windows);
    if cardinality > BRUTE_FORCE_LIMIT {
        return Err(BruteForceError::TooLarge {
            cardinality,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    // choice[β] = 0 for no toggle, k + 1 for a toggle at L_β + k.
    let mut choice = vec![0usize; windows.mu()];
    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut candidates = 0u64;
    let mut feasible = 0u64;
    loop {
        let mut toggles = vec![false; horizon + 1];
        for (beta, &c) in choice.iter().enumerate() {
            if c > 0 {
                toggles[windows.windows[beta].0 + c - 1] = true;
            }
        }
        let mut level = true;
        let sw: Vec<bool> = toggles
            .iter()
            .map(|&t| {
                level ^= t;
                level
            })
            .collect();
        let swf: Vec<f64> = sw.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        candidates += 1;
        let traj = ev.trajectory(&swf);
        if !traj.non_finite && ev.band_violation(&swf, &traj).is_none() {
            feasible += 1;
            let value = ev.objective_of(&swf, &traj).total;
            let better = match &best {
                None => true,
                Some((v, cur)) => value < *v || (value == *v && sw > *cur),
            };
            if better {
                best = Some((value, sw));
            }
        }
        // Odometer over the per-window choices.
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                let (objective, sw) = match best {
                    Some((v, sw)) => (v, Some(sw)),
                    None => (f64::INFINITY, None),
                };
                return Ok(BruteForceResult {
                    sw,
                    objective,
                    candidates,
                    feasible,
                });
            }
            let (l, u) = windows.windows[pos];
            if choice[pos] < u - l + 1 {
                choice[pos] += 1;
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{Band, Step};
    use nalgebra::DMatrix;

    fn setup(band: f64, e_lo: f64) -> (SystemSpec, ScenarioSpec) {
        let s = |v| DMatrix::from_element(1, 1, v);
        let sys = SystemSpec::new(s(0.6), s(1.0), s(1.0), s(-0.3), 1.0).unwrap();
        let scen = ScenarioSpec {
            steps: vec![Step::scalar(0.0, 1.0)],
            band: Band::Absolute(band),
            settling_time: 2.0,
            horizon: 8.0,
            runtime_lo: 1.0,
            runtime_hi: 2.0,
            error_lo: e_lo,
            error_hi: 0.0,
        };
        (sys, scen)
    }

    #[test]
    fn no_windows_leaves_only_all_hi() {
        let (sys, scen) = setup(10.0, 0.1);
        let res = brute_force_schedule_search(
            &sys,
            &scen,
            &SwitchingWindows::empty(),
            ModelOptions::default(),
        )
        .unwrap();
        assert_eq!(res.candidates, 1);
        assert_eq!(res.sw, Some(vec![true; 9]));
    }

    #[test]
    fn one_window_of_three_samples_has_four_candidates() {
        let (sys, scen) = setup(10.0, 0.1);
        let w = SwitchingWindows::new(vec![(3, 5)]);
        assert_eq!(schedule_space_size(&w), 4);
        let res = brute_force_schedule_search(&sys, &scen, &w, ModelOptions::default()).unwrap();
        assert_eq!(res.candidates, 4);
        assert_eq!(res.feasible, 4);
        // Runtime dominates with a tiny error, so the earliest switch wins.
        let opts = ModelOptions {
            w_cost: 0.0,
            ..Default::default()
        };
        let res = brute_force_schedule_search(&sys, &scen, &w, opts).unwrap();
        let sw = res.sw.unwrap();
        assert_eq!(&sw[..4], &[true, true, true, false]);
        assert!(sw[4..].iter().all(|b| !b));
    }

    #[test]
    fn oversized_space_is_refused() {
        let (sys, mut scen) = setup(10.0, 0.1);
        let w = SwitchingWindows::new(vec![(1, 99), (101, 199), (201, 299), (301, 399)]);
        scen.horizon = 400.0;
        let err =
            brute_force_schedule_search(&sys, &scen, &w, ModelOptions::default()).unwrap_err();
        assert_eq!(
            err,
            BruteForceError::TooLarge {
                cardinality: 100u128.pow(4),
                limit: BRUTE_FORCE_LIMIT
            }
        );
    }

    #[test]
    fn ties_prefer_hi() {
        // Equal runtimes and zero error make every candidate cost the same.
        let (sys, mut scen) = setup(10.0, 0.0);
        scen.runtime_lo = 2.0;
        let w = SwitchingWindows::new(vec![(2, 3), (5, 6)]);
        let res = brute_force_schedule_search(&sys, &scen, &w, ModelOptions::default()).unwrap();
        assert_eq!(res.sw, Some(vec![true; 9]));
    }
}
