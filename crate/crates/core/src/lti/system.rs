use nalgebra::{DMatrix, DVector};

use super::{shape_of, LtiError, TimeGrid};

/// Plant, controller gain, cost weights and sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub h: f64,
    pub x0: DVector<f64>,
    pub u0: DVector<f64>,
}

impl SystemSpec {
    /// Identity weights and a zero initial condition.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        k: DMatrix<f64>,
        h: f64,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        let m = b.ncols();
        let sys = Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
            x0: DVector::zeros(n),
            u0: DVector::zeros(m),
            a,
            b,
            c,
            k,
            h,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_weights(mut self, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, LtiError> {
        self.q = q;
        self.r = r;
        self.validate()?;
        Ok(self)
    }

    pub fn with_initial(mut self, x0: DVector<f64>, u0: DVector<f64>) -> Result<Self, LtiError> {
        self.x0 = x0;
        self.u0 = u0;
        self.validate()?;
        Ok(self)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn grid(&self) -> Result<TimeGrid, LtiError> {
        TimeGrid::new(self.h)
    }

    pub fn validate(&self) -> Result<(), LtiError> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let q = self.c.nrows();
        if n == 0 || m == 0 || q == 0 {
            return Err(LtiError::InvalidParameter {
                name: "dimensions",
                reason: format!("states, inputs and outputs must be nonzero (n={n}, m={m}, q={q})"),
            });
        }
        expect_shape("A", &self.a, n, n)?;
        expect_shape("B", &self.b, n, m)?;
        expect_shape("C", &self.c, q, n)?;
        expect_shape("K", &self.k, m, n)?;
        expect_shape("Q", &self.q, n, n)?;
        expect_shape("R", &self.r, m, m)?;
        expect_len("x0", &self.x0, n)?;
        expect_len("u0", &self.u0, m)?;
        for (name, mat) in [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("K", &self.k),
            ("Q", &self.q),
            ("R", &self.r),
        ] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(LtiError::InvalidParameter {
                    name,
                    reason: "entries must be finite".into(),
                });
            }
        }
        if self.x0.iter().chain(self.u0.iter()).any(|v| !v.is_finite()) {
            return Err(LtiError::InvalidParameter {
                name: "x0",
                reason: "initial condition must be finite".into(),
            });
        }
        TimeGrid::new(self.h)?;
        check_symmetric("Q", &self.q)?;
        check_symmetric("R", &self.r)?;
        let scale = self.q.amax().max(1.0);
        let shifted = &self.q + DMatrix::identity(n, n) * (1e-12 * scale);
        if shifted.cholesky().is_none() {
            return Err(LtiError::InvalidParameter {
                name: "Q",
                reason: "must be positive semidefinite".into(),
            });
        }
        if self.r.clone().cholesky().is_none() {
            return Err(LtiError::InvalidParameter {
                name: "R",
                reason: "must be positive definite".into(),
            });
        }
        Ok(())
    }
}

fn expect_shape(
    what: &'static str,
    mat: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), LtiError> {
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(LtiError::Dimension {
            what,
            expected: shape_of(rows, cols),
            found: shape_of(mat.nrows(), mat.ncols()),
        });
    }
    Ok(())
}

fn expect_len(what: &'static str, v: &DVector<f64>, len: usize) -> Result<(), LtiError> {
    if v.len() != len {
        return Err(LtiError::Dimension {
            what,
            expected: len.to_string(),
            found: v.len().to_string(),
        });
    }
    Ok(())
}

fn check_symmetric(name: &'static str, mat: &DMatrix<f64>) -> Result<(), LtiError> {
    let tol = 1e-12 * mat.amax().max(1.0);
    if (mat - mat.transpose()).amax() > tol {
        return Err(LtiError::InvalidParameter {
            name,
            reason: "must be symmetric".into(),
        });
    }
    Ok(())
}

/// Reference change at time `time` (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub time: f64,
    pub reference: DVector<f64>,
}

impl Step {
    pub fn new(time: f64, reference: DVector<f64>) -> Self {
        Self { time, reference }
    }

    pub fn scalar(time: f64, reference: f64) -> Self {
        Self::new(time, DVector::from_element(1, reference))
    }
}

/// Half-width of the admissible output band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Band {
    Absolute(f64),
    /// Percent of `|γ_j|`, resolved per step and output.
    Percent(f64),
}

impl Band {
    pub fn half_width(&self, reference: &DVector<f64>) -> DVector<f64> {
        match *self {
            Band::Absolute(d) => DVector::from_element(reference.len(), d),
            Band::Percent(p) => reference.map(|g| p / 100.0 * g.abs()),
        }
    }
}

/// Step schedule, band, horizon, per-precision runtimes and roundoff bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub steps: Vec<Step>,
    pub band: Band,
    pub settling_time: f64,
    pub horizon: f64,
    pub runtime_lo: f64,
    pub runtime_hi: f64,
    pub error_lo: f64,
    pub error_hi: f64,
}

impl ScenarioSpec {
    pub fn band_half_width(&self, step: usize) -> DVector<f64> {
        self.band.half_width(&self.steps[step].reference)
    }

    /// Checks the scenario against a system with `outputs` outputs sampled on `grid`.
    pub fn validate(&self, outputs: usize, grid: TimeGrid) -> Result<(), LtiError> {
        let invalid = |name, reason: String| Err(LtiError::InvalidParameter { name, reason });
        if self.steps.is_empty() {
            return invalid("steps", "at least one step is required".into());
        }
        if self.steps[0].time != 0.0 {
            return invalid(
                "steps",
                format!("first step must be at t=0, got {}", self.steps[0].time),
            );
        }
        for (j, step) in self.steps.iter().enumerate() {
            if step.reference.len() != outputs {
                return Err(LtiError::Dimension {
                    what: "reference",
                    expected: outputs.to_string(),
                    found: step.reference.len().to_string(),
                });
            }
            if !step.time.is_finite() || step.reference.iter().any(|g| !g.is_finite()) {
                return invalid("steps", format!("step {j} is not finite"));
            }
            if j > 0 {
                let prev = &self.steps[j - 1];
                if step.time <= prev.time
                    || grid.ceil_samples(step.time) <= grid.ceil_samples(prev.time)
                {
                    return invalid(
                        "steps",
                        format!(
                            "step {j} at {} s does not follow step {} on the sample grid",
                            step.time,
                            j - 1
                        ),
                    );
                }
            }
        }
        if !(self.horizon.is_finite() && self.horizon > self.steps.last().unwrap().time) {
            return invalid("horizon", "must exceed the last step instant".into());
        }
        if !(self.settling_time.is_finite() && self.settling_time > 0.0) {
            return invalid("settling_time", "must be positive".into());
        }
        match self.band {
            Band::Absolute(d) | Band::Percent(d) if !(d.is_finite() && d > 0.0) => {
                return invalid("band", "half-width must be positive".into());
            }
            _ => {}
        }
        for j in 0..self.steps.len() {
            if self.band_half_width(j).iter().any(|d| *d <= 0.0) {
                return invalid(
                    "band",
                    format!("percent band of step {j} is zero for a zero reference"),
                );
            }
        }
        if !(self.runtime_lo > 0.0
            && self.runtime_lo <= self.runtime_hi
            && self.runtime_hi.is_finite())
        {
            return invalid("runtime", "requires 0 < runtime_lo <= runtime_hi".into());
        }
        if !(self.error_hi >= 0.0 && self.error_hi <= self.error_lo && self.error_lo.is_finite()) {
            return invalid("error", "requires 0 <= error_hi <= error_lo".into());
        }
        Ok(())
    }
}

/// Discrete LQR gain by Riccati iteration, with the sign convention `u = K x`.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LtiError> {
    const MAX_ITER: usize = 200_000;
    let mut p = q.clone();
    for _ in 0..MAX_ITER {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let gain = s
            .clone()
            .cholesky()
            .ok_or(LtiError::InvalidParameter {
                name: "R",
                reason: "R + BᵀPB lost positive definiteness".into(),
            })?
            .solve(&(&bt_p * a));
        let next = q + a.transpose() * &p * a - (a.transpose() * &p * b) * &gain;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if !p.amax().is_finite() {
            break;
        }
        if diff <= 1e-13 * p.amax().max(1.0) {
            let bt_p = b.transpose() * &p;
            let s = r + &bt_p * b;
            let gain = s.cholesky().unwrap().solve(&(&bt_p * a));
            return Ok(-gain);
        }
    }
    Err(LtiError::RiccatiDiverged {
        iterations: MAX_ITER,
    })
}
