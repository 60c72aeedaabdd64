//! Software rounding into binary floating-point formats and per-sample
//! roundoff bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{
    simulate_closed_loop, Arithmetic, LtiError, ReferencePlan, ScenarioSpec, SystemSpec, Trajectory,
};

/// A binary floating-point format with gradual underflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoundingSpec {
    /// Precision including the hidden bit.
    pub significand_bits: i32,
    pub min_exponent: i32,
    pub max_exponent: i32,
}

impl RoundingSpec {
    pub const BINARY16: Self = Self::new(11, -14, 15);
    pub const BINARY32: Self = Self::new(24, -126, 127);
    pub const BINARY64: Self = Self::new(53, -1022, 1023);

    pub const fn new(significand_bits: i32, min_exponent: i32, max_exponent: i32) -> Self {
        Self {
            significand_bits,
            min_exponent,
            max_exponent,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "binary16" | "fp16" | "half" => Some(Self::BINARY16),
            "binary32" | "fp32" | "single" => Some(Self::BINARY32),
            "binary64" | "fp64" | "double" => Some(Self::BINARY64),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Self::BINARY16 => "binary16".into(),
            Self::BINARY32 => "binary32".into(),
            Self::BINARY64 => "binary64".into(),
            s => format!(
                "p{}e{}..{}",
                s.significand_bits, s.min_exponent, s.max_exponent
            ),
        }
    }

    /// Unit roundoff `2^-p`.
    pub fn eps(&self) -> f64 {
        pow2(-self.significand_bits)
    }

    /// Spacing of subnormals, `2^(emin - p + 1)`.
    pub fn delta(&self) -> f64 {
        pow2(self.min_exponent - self.significand_bits + 1)
    }

    pub fn max_finite(&self) -> f64 {
        (2.0 - pow2(1 - self.significand_bits)) * pow2(self.max_exponent)
    }

    fn is_native(&self) -> bool {
        self.significand_bits >= 53 && self.min_exponent <= -1022 && self.max_exponent >= 1023
    }

    /// Whether every value of this format is representable in binary64.
    pub fn validate(&self) -> Result<(), PrecisionError> {
        let ok = (2..=53).contains(&self.significand_bits)
            && self.min_exponent < 0
            && self.max_exponent > 0
            && self.min_exponent >= -1022
            && self.max_exponent <= 1023;
        if ok {
            Ok(())
        } else {
            Err(PrecisionError::UnsupportedFormat(*self))
        }
    }
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Round to nearest, ties to even. Overflow gives a signed infinity and
/// non-finite inputs pass through.
pub fn round_to_format(v: f64, spec: RoundingSpec) -> f64 {
    if !v.is_finite() || v == 0.0 || spec.is_native() {
        return v;
    }
    let biased = ((v.to_bits() >> 52) & 0x7ff) as i32;
    let exponent = if biased == 0 { -1023 } else { biased - 1023 };
    let quantum = pow2(exponent.max(spec.min_exponent) - spec.significand_bits + 1);
    let r = (v / quantum).round_ties_even() * quantum;
    if r.abs() > spec.max_finite() {
        f64::INFINITY.copysign(v)
    } else {
        r
    }
}

/// Precision level of one controller sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Lo,
    Hi,
}

impl Precision {
    pub fn from_switch(sw: bool) -> Self {
        if sw {
            Precision::Hi
        } else {
            Precision::Lo
        }
    }

    pub fn is_hi(self) -> bool {
        self == Precision::Hi
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Lo => "lo",
            Precision::Hi => "hi",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = PrecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lo" => Ok(Precision::Lo),
            "hi" => Ok(Precision::Hi),
            other => Err(PrecisionError::UnknownPrecision(other.to_string())),
        }
    }
}

/// Formats used for the two precision levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatPair {
    pub lo: RoundingSpec,
    pub hi: RoundingSpec,
}

impl Default for FormatPair {
    fn default() -> Self {
        Self {
            lo: RoundingSpec::BINARY16,
            hi: RoundingSpec::BINARY32,
        }
    }
}

impl FormatPair {
    pub fn get(&self, p: Precision) -> RoundingSpec {
        match p {
            Precision::Lo => self.lo,
            Precision::Hi => self.hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrecisionError {
    #[error("format {0:?} is not representable within binary64")]
    UnsupportedFormat(RoundingSpec),
    #[error("unknown precision tag {0:?}")]
    UnknownPrecision(String),
    #[error("schedule covers {found} samples, expected {expected}")]
    ScheduleLength { expected: usize, found: usize },
    #[error("invalid {what} range {index}: [{lo}, {hi}]")]
    InvalidRange {
        what: &'static str,
        index: usize,
        lo: f64,
        hi: f64,
    },
    #[error("{what} ranges: expected {expected} entries, found {found}")]
    RangeCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Lti(#[from] LtiError),
}

struct Emulated {
    formats: Vec<RoundingSpec>,
}

impl Arithmetic for Emulated {
    #[inline]
    fn round(&self, sample: usize, v: f64) -> f64 {
        round_to_format(v, self.formats[sample])
    }
}

/// Closed loop with every operation of sample `i` rounded to the format of
/// `precisions[i]`.
pub fn simulate_rounded(
    sys: &SystemSpec,
    scen: &ScenarioSpec,
    precisions: &[Precision],
    formats: FormatPair,
) -> Result<Trajectory, PrecisionError> {
    let plan = ReferencePlan::new(sys, scen)?;
    simulate_rounded_with_plan(sys, &plan, precisions, formats)
}

pub fn simulate_rounded_with_plan(
    sys: &SystemSpec,
    plan: &ReferencePlan,
    precisions: &[Precision],
    formats: FormatPair,
) -> Result<Trajectory, PrecisionError> {
    if precisions.len() != plan.horizon() + 1 {
        return Err(PrecisionError::ScheduleLength {
            expected: plan.horizon() + 1,
            found: precisions.len(),
        });
    }
    let ar = Emulated {
        formats: precisions.iter().map(|&p| formats.get(p)).collect(),
    };
    Ok(simulate_closed_loop(sys, plan, &ar))
}

/// Closed loop with a single format for every sample.
pub fn simulate_uniform(
    sys: &SystemSpec,
    plan: &ReferencePlan,
    format: RoundingSpec,
) -> Trajectory {
    let ar = Emulated {
        formats: vec![format; plan.horizon() + 1],
    };
    simulate_closed_loop(sys, plan, &ar)
}

/// Physical ranges of the plant state and the controller input, assumed to
/// contain every setpoint as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableRanges {
    pub state: Vec<(f64, f64)>,
    pub input: Vec<(f64, f64)>,
}

impl VariableRanges {
    pub fn symmetric(state: &[f64], input: &[f64]) -> Self {
        Self {
            state: state.iter().map(|&r| (-r, r)).collect(),
            input: input.iter().map(|&r| (-r, r)).collect(),
        }
    }

    pub fn validate(&self, states: usize, inputs: usize) -> Result<(), PrecisionError> {
        for (what, list, expected) in [
            ("state", &self.state, states),
            ("input", &self.input, inputs),
        ] {
            if list.len() != expected {
                return Err(PrecisionError::RangeCount {
                    what,
                    expected,
                    found: list.len(),
                });
            }
            for (index, &(lo, hi)) in list.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(PrecisionError::InvalidRange {
                        what,
                        index,
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Magnitude and absolute-error bound of an intermediate quantity.
#[derive(Debug, Clone, Copy)]
struct Bounded {
    mag: f64,
    err: f64,
}

struct ErrorModel {
    spec: RoundingSpec,
}

impl ErrorModel {
    fn exact(mag: f64) -> Bounded {
        Bounded { mag, err: 0.0 }
    }

    fn constant(&self, c: f64) -> Bounded {
        Bounded {
            mag: c.abs(),
            err: (round_to_format(c, self.spec) - c).abs(),
        }
    }

    fn rounded(&self, mag: f64, err: f64) -> Bounded {
        let reach = mag + err;
        let fresh = if reach == 0.0 {
            0.0
        } else {
            self.spec.eps() * reach + self.spec.delta()
        };
        Bounded {
            mag,
            err: err + fresh,
        }
    }

    fn mul(&self, a: Bounded, b: Bounded) -> Bounded {
        self.rounded(a.mag * b.mag, a.err * b.mag + b.err * a.mag + a.err * b.err)
    }

    fn add(&self, a: Bounded, b: Bounded) -> Bounded {
        self.rounded(a.mag + b.mag, a.err + b.err)
    }

    fn dot(&self, coefs: impl Iterator<Item = f64>, operands: &[Bounded]) -> Bounded {
        let mut acc: Option<Bounded> = None;
        for (c, &x) in coefs.zip(operands) {
            let p = self.mul(self.constant(c), x);
            acc = Some(match acc {
                None => p,
                Some(a) => self.add(a, p),
            });
        }
        acc.unwrap_or(Self::exact(0.0))
    }
}

fn row(mat: &DMatrix<f64>, r: usize) -> impl Iterator<Item = f64> + '_ {
    (0..mat.ncols()).map(move |c| mat[(r, c)])
}

/// Per-component error bounds of one regulator update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepErrorBreakdown {
    /// One entry per controller output `u`.
    pub input: Vec<f64>,
    /// One entry per next state `x'`.
    pub state: Vec<f64>,
    /// One entry per output `y`.
    pub output: Vec<f64>,
}

impl StepErrorBreakdown {
    pub fn worst(&self) -> f64 {
        self.input
            .iter()
            .chain(&self.state)
            .chain(&self.output)
            .fold(0.0, |m, &e| m.max(e))
    }
}

/// Error bounds on every component of one sample
/// `u = u_ss + K(x - x_ss)`, `x' = A x + B u`, `y = C x'` with operands exact.
///
/// Every operation contributes `ε|z| + δ` on its result magnitude `|z|`.
/// Constants contribute their representation error.
pub fn step_error_breakdown(
    sys: &SystemSpec,
    ranges: &VariableRanges,
    spec: RoundingSpec,
) -> Result<StepErrorBreakdown, PrecisionError> {
    spec.validate()?;
    ranges.validate(sys.states(), sys.inputs())?;
    let model = ErrorModel { spec };
    let mag = |&(lo, hi): &(f64, f64)| f64::max(lo.abs(), hi.abs());
    let d: Vec<Bounded> = ranges
        .state
        .iter()
        .map(|r| ErrorModel::exact(mag(r)))
        .collect();
    let v: Vec<Bounded> = ranges
        .input
        .iter()
        .map(|r| ErrorModel::exact(mag(r)))
        .collect();
    // x and x_ss share a range, so the rounded x - x_ss is at most its width.
    let dev: Vec<Bounded> = ranges
        .state
        .iter()
        .map(|&(lo, hi)| model.rounded(hi - lo, 0.0))
        .collect();

    let input = (0..sys.inputs())
        .map(|r| {
            let acc = model.dot(row(&sys.k, r), &dev);
            model.add(v[r], acc).err
        })
        .collect();
    let mut state = Vec::with_capacity(sys.states());
    let mut next = Vec::with_capacity(sys.states());
    for r in 0..sys.states() {
        let ax = model.dot(row(&sys.a, r), &d);
        let bu = model.dot(row(&sys.b, r), &v);
        let sum = model.add(ax, bu);
        state.push(sum.err);
        next.push(ErrorModel::exact(sum.mag));
    }
    let output = (0..sys.outputs())
        .map(|r| model.dot(row(&sys.c, r), &next).err)
        .collect();
    Ok(StepErrorBreakdown {
        input,
        state,
        output,
    })
}

/// Bound on the absolute error introduced by one sample: the maximum of
/// [`step_error_breakdown`] over all components of `u`, `x'` and `y`.
pub fn conservative_step_error_bound(
    sys: &SystemSpec,
    ranges: &VariableRanges,
    spec: RoundingSpec,
) -> Result<f64, PrecisionError> {
    Ok(step_error_breakdown(sys, ranges, spec)?.worst())
}

/// Component-wise worst-case tube `b_i = |M| b_{i-1} + e_i 1` of the
/// augmented loop `(x, u)` driven by per-sample errors `errors[i]`.
pub fn propagate_error_tube(sys: &SystemSpec, errors: &[f64]) -> Vec<DVector<f64>> {
    let n = sys.states();
    let m = sys.inputs();
    let mut abs_m = DMatrix::zeros(n + m, n + m);
    abs_m.view_mut((0, 0), (n, n)).copy_from(&sys.a.abs());
    abs_m.view_mut((0, n), (n, m)).copy_from(&sys.b.abs());
    abs_m.view_mut((n, 0), (m, n)).copy_from(&sys.k.abs());
    let mut tube = Vec::with_capacity(errors.len());
    let mut b = DVector::zeros(n + m);
    tube.push(b.clone());
    for &e in errors.iter().skip(1) {
        b = &abs_m * &b + DVector::from_element(n + m, e);
        tube.push(b.clone());
    }
    tube
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{Band, Exact, Step};
    use half::f16;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_roundoffs() {
        assert_eq!(RoundingSpec::BINARY16.eps(), 2f64.powi(-11));
        assert_eq!(RoundingSpec::BINARY32.eps(), 2f64.powi(-24));
        assert_eq!(RoundingSpec::BINARY64.eps(), 2f64.powi(-53));
        assert_eq!(RoundingSpec::BINARY16.delta(), 2f64.powi(-24));
        assert_eq!(RoundingSpec::BINARY32.delta(), 2f64.powi(-149));
        assert_eq!(RoundingSpec::BINARY16.max_finite(), 65504.0);
        assert_eq!(RoundingSpec::BINARY32.max_finite(), f32::MAX as f64);
    }

    #[test]
    fn binary16_examples() {
        let h = RoundingSpec::BINARY16;
        assert_eq!(round_to_format(1.0, h), 1.0);
        let tie = 1.0 + 2f64.powi(-11);
        assert_eq!(round_to_format(tie, h), 1.0);
        assert_eq!(f16::from_f64(tie).to_f64(), 1.0);
        let below = 1.0 + 2f64.powi(-12);
        assert_eq!(round_to_format(below, h), 1.0);
        assert_eq!(
            round_to_format(1.0 + 3.0 * 2f64.powi(-11), h),
            1.0 + 2f64.powi(-9)
        );
        assert_eq!(round_to_format(70000.0, h), f64::INFINITY);
        assert_eq!(round_to_format(-70000.0, h), f64::NEG_INFINITY);
        assert_eq!(round_to_format(65519.0, h), 65504.0);
        assert_eq!(round_to_format(65520.0, h), f64::INFINITY);
        assert_eq!(round_to_format(2f64.powi(-25), h), 0.0);
        assert_eq!(round_to_format(3.0 * 2f64.powi(-26), h), 2f64.powi(-24));
        assert!(round_to_format(f64::NAN, h).is_nan());
    }

    #[test]
    fn matches_reference_conversions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let v = f64::from_bits(rng.gen::<u64>());
            if !v.is_finite() {
                continue;
            }
            let single = v as f32;
            let h = round_to_format(single as f64, RoundingSpec::BINARY16);
            assert_eq!(
                h.to_bits(),
                f16::from_f32(single).to_f64().to_bits(),
                "{v:e}"
            );
            let s = round_to_format(v, RoundingSpec::BINARY32);
            assert_eq!(s.to_bits(), (v as f32 as f64).to_bits(), "{v:e}");
            let scaled = v.signum() * rng.gen_range(0.0..1.0e5) * 2f64.powi(rng.gen_range(-30..2));
            let scaled = scaled as f32;
            let h = round_to_format(scaled as f64, RoundingSpec::BINARY16);
            assert_eq!(
                h.to_bits(),
                f16::from_f32(scaled).to_f64().to_bits(),
                "{scaled:e}"
            );
        }
    }

    #[test]
    fn wide_inputs_round_once() {
        // Rounding through binary32 first would give 10096.
        let v = 10100.000430818935;
        assert_eq!(round_to_format(v, RoundingSpec::BINARY16), 10104.0);
        assert_eq!(round_to_format(10100.0, RoundingSpec::BINARY16), 10096.0);
    }

    proptest! {
        #[test]
        fn rounding_is_idempotent(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            for spec in [RoundingSpec::BINARY16, RoundingSpec::BINARY32, RoundingSpec::BINARY64] {
                let r = round_to_format(v, spec);
                prop_assert_eq!(round_to_format(r, spec).to_bits(), r.to_bits());
            }
        }

        #[test]
        fn rounding_error_within_model(v in -6.0e4f64..6.0e4, scale in -40i32..0) {
            let v = v * 2f64.powi(scale);
            for spec in [RoundingSpec::BINARY16, RoundingSpec::BINARY32, RoundingSpec::BINARY64] {
                let r = round_to_format(v, spec);
                prop_assert!((r - v).abs() <= spec.eps() * v.abs() + spec.delta());
            }
        }
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_ranges_leave_only_absolute_terms() {
        let sys =
            SystemSpec::new(scalar(0.3), scalar(0.7), scalar(1.1), scalar(-2.9), 0.1).unwrap();
        let ranges = VariableRanges::symmetric(&[0.0], &[0.0]);
        let spec = RoundingSpec::BINARY16;
        let bound = conservative_step_error_bound(&sys, &ranges, spec).unwrap();
        assert!(bound <= 8.0 * spec.delta());
    }

    #[test]
    fn single_product_bound() {
        // One product of exact operands with |x|, |y| <= 1.
        let model = ErrorModel {
            spec: RoundingSpec::BINARY16,
        };
        let p = model.mul(ErrorModel::exact(1.0), ErrorModel::exact(1.0));
        assert_eq!(
            p.err,
            RoundingSpec::BINARY16.eps() + RoundingSpec::BINARY16.delta()
        );
    }

    #[test]
    fn bound_is_monotone_in_format() {
        let sys = SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[-1.3, -0.7]),
            0.1,
        )
        .unwrap();
        let ranges = VariableRanges::symmetric(&[2.0, 5.0], &[10.0]);
        let b16 = conservative_step_error_bound(&sys, &ranges, RoundingSpec::BINARY16).unwrap();
        let b32 = conservative_step_error_bound(&sys, &ranges, RoundingSpec::BINARY32).unwrap();
        let b64 = conservative_step_error_bound(&sys, &ranges, RoundingSpec::BINARY64).unwrap();
        assert!(b16 >= b32 && b32 >= b64 && b64 > 0.0);
        let bad = VariableRanges {
            state: vec![(1.0, 0.0), (0.0, 0.0)],
            input: vec![(0.0, 0.0)],
        };
        assert!(conservative_step_error_bound(&sys, &bad, RoundingSpec::BINARY16).is_err());
        let short = VariableRanges::symmetric(&[1.0], &[1.0]);
        assert!(conservative_step_error_bound(&sys, &short, RoundingSpec::BINARY16).is_err());
    }

    fn regulation_scenario(horizon: f64) -> ScenarioSpec {
        ScenarioSpec {
            steps: vec![Step::scalar(0.0, 0.0)],
            band: Band::Absolute(1.0),
            settling_time: 1.0,
            horizon,
            runtime_lo: 1.0,
            runtime_hi: 2.0,
            error_lo: 0.0,
            error_hi: 0.0,
        }
    }

    #[test]
    fn native_width_emulation_is_bitwise_nominal() {
        let sys = SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.91, 0.13, -0.27, 0.83]),
            DMatrix::from_row_slice(2, 1, &[0.01, 0.17]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.3]),
            DMatrix::from_row_slice(1, 2, &[-1.3, -0.7]),
            0.1,
        )
        .unwrap()
        .with_initial(
            DVector::from_vec(vec![0.3, -1.7]),
            DVector::from_element(1, 0.2),
        )
        .unwrap();
        let mut scen = regulation_scenario(10.0);
        scen.steps = vec![Step::scalar(0.0, 1.3), Step::scalar(4.0, -0.4)];
        let plan = ReferencePlan::new(&sys, &scen).unwrap();
        let nominal = simulate_closed_loop(&sys, &plan, &Exact);
        let formats = FormatPair {
            lo: RoundingSpec::BINARY64,
            hi: RoundingSpec::BINARY64,
        };
        let n = plan.horizon() + 1;
        let emulated = simulate_rounded(&sys, &scen, &vec![Precision::Lo; n], formats).unwrap();
        assert!(emulated.bitwise_eq(&nominal));
        assert!(simulate_rounded(&sys, &scen, &vec![Precision::Lo; n - 1], formats).is_err());
    }

    #[test]
    fn dyadic_scalar_system_is_exact_in_binary16() {
        let sys = SystemSpec::new(scalar(0.5), scalar(0.25), scalar(1.0), scalar(-0.5), 1.0)
            .unwrap()
            .with_initial(DVector::from_element(1, 1.0), DVector::zeros(1))
            .unwrap();
        let scen = regulation_scenario(12.0);
        let plan = ReferencePlan::new(&sys, &scen).unwrap();
        let nominal = simulate_closed_loop(&sys, &plan, &Exact);
        let emulated = simulate_uniform(&sys, &plan, RoundingSpec::BINARY16);
        assert!(emulated.bitwise_eq(&nominal));
    }

    fn dyadic(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
        (rng.gen_range(-64i32..=64) as f64 / 64.0) * scale
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn emulation_error_stays_in_propagated_tube(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=3);
            let a = DMatrix::from_fn(n, n, |_, _| dyadic(&mut rng, 0.5 / n as f64));
            let b = DMatrix::from_fn(n, 1, |_, _| dyadic(&mut rng, 0.5));
            let k = DMatrix::from_fn(1, n, |_, _| dyadic(&mut rng, 0.5 / n as f64));
            let c = DMatrix::from_fn(1, n, |_, _| dyadic(&mut rng, 1.0));
            let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-4.0..4.0));
            let sys = SystemSpec::new(a, b, c, k, 1.0).unwrap()
                .with_initial(x0, DVector::zeros(1)).unwrap();
            let mut scen = regulation_scenario(30.0);
            scen.steps[0].reference[0] = 0.0;
            let plan = match ReferencePlan::new(&sys, &scen) {
                Ok(p) => p,
                Err(_) => return Ok(()),
            };
            let nominal = simulate_closed_loop(&sys, &plan, &Exact);
            for spec in [RoundingSpec::BINARY16, RoundingSpec::BINARY32] {
                let emulated = simulate_uniform(&sys, &plan, spec);
                // Ranges must enclose the emulated values for the bound to apply.
                let grow = |vals: &dyn Fn(usize) -> f64| 1.5 * (0..=plan.horizon()).map(vals).fold(0.0, f64::max) + 1.0;
                let state: Vec<f64> = (0..n).map(|c| grow(&|i| emulated.x[i][c].abs().max(nominal.x[i][c].abs()))).collect();
                let input = vec![grow(&|i| emulated.u[i][0].abs().max(nominal.u[i][0].abs()))];
                let ranges = VariableRanges::symmetric(&state, &input);
                let e = conservative_step_error_bound(&sys, &ranges, spec).unwrap();
                // Sample 0 also rounds x0.
                let init = sys.x0.iter().map(|v| (round_to_format(*v, spec) - v).abs()).fold(0.0, f64::max);
                let mut errors = vec![0.0; plan.horizon() + 1];
                errors.iter_mut().skip(1).for_each(|v| *v = e);
                let mut tube = propagate_error_tube(&sys, &errors);
                // Initial rounding is propagated as an extra tube seeded at sample 0.
                let mut seed_tube = DVector::zeros(n + 1);
                seed_tube.rows_mut(0, n).fill(init);
                let abs_m = {
                    let mut m = DMatrix::zeros(n + 1, n + 1);
                    m.view_mut((0, 0), (n, n)).copy_from(&sys.a.abs());
                    m.view_mut((0, n), (n, 1)).copy_from(&sys.b.abs());
                    m.view_mut((n, 0), (1, n)).copy_from(&sys.k.abs());
                    m
                };
                for t in tube.iter_mut() {
                    *t += &seed_tube;
                    seed_tube = &abs_m * &seed_tube;
                }
                for i in 0..=plan.horizon() {
                    for col in 0..n {
                        let dev = (emulated.x[i][col] - nominal.x[i][col]).abs();
                        prop_assert!(dev <= tube[i][col] * (1.0 + 1e-9) + 1e-300, "x[{}][{}] {} > {}", i, col, dev, tube[i][col]);
                    }
                    let dev = (emulated.u[i][0] - nominal.u[i][0]).abs();
                    prop_assert!(dev <= tube[i][n] * (1.0 + 1e-9) + 1e-300);
                }
            }
        }
    }
}
