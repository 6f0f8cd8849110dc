//! Diffusion, reflection and functional specifications shared by every solver.
//!
//! The barrier position is always called `b_barrier`; the symbol `b` is kept
//! free for the Sturm–Liouville potential in [`crate::spectral`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points used to probe coefficient signs on a bounded domain.
const VALIDATION_POINTS: usize = 1001;
/// Probing range used for sign checks on `[0, ∞)`.
const SINGLE_BARRIER_PROBE: f64 = 1.0e3;

/// A scalar coefficient `x ↦ value`, used for the drift `μ`, the squared
/// volatility `σ²` and the running cost `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientSpec {
    ConstantDrift { mu: f64 },
    /// Mean-reverting drift `μ(x) = −a(x − c)`.
    OuDrift { a: f64, c: f64 },
    ConstantSq { sigma2: f64 },
    /// Samples joined by linear interpolation.
    SampledGrid { xs: Vec<f64>, values: Vec<f64> },
    ConstantCost { value: f64 },
    ZeroCost,
}

impl CoefficientSpec {
    pub fn sampled(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() != values.len() {
            return Err(Error::GridMismatch { expected: xs.len(), got: values.len() });
        }
        if xs.len() < 2 {
            return Err(Error::TooFewNodes { required: 2, got: xs.len() });
        }
        if let Some(index) = first_non_ascending(&xs) {
            return Err(Error::NonAscendingGrid { index });
        }
        Ok(CoefficientSpec::SampledGrid { xs, values })
    }

    /// Evaluates the coefficient at `x`.
    ///
    /// Parametric families are defined everywhere; sampled grids reject
    /// points outside `[xs.first, xs.last]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            CoefficientSpec::SampledGrid { xs, values } => interpolate(xs, values, x),
            _ => Ok(self.eval_parametric(x)),
        }
    }

    /// Evaluation for hot loops where `x` is known to lie in the domain.
    /// Sampled grids are clamped to their end values.
    #[inline]
    pub(crate) fn eval_clamped(&self, x: f64) -> f64 {
        match self {
            CoefficientSpec::SampledGrid { xs, values } => {
                let x = x.clamp(xs[0], xs[xs.len() - 1]);
                interpolate(xs, values, x).unwrap_or(f64::NAN)
            }
            _ => self.eval_parametric(x),
        }
    }

    #[inline]
    fn eval_parametric(&self, x: f64) -> f64 {
        match *self {
            CoefficientSpec::ConstantDrift { mu } => mu,
            CoefficientSpec::OuDrift { a, c } => -a * (x - c),
            CoefficientSpec::ConstantSq { sigma2 } => sigma2,
            CoefficientSpec::ConstantCost { value } => value,
            CoefficientSpec::ZeroCost => 0.0,
            CoefficientSpec::SampledGrid { .. } => unreachable!("handled by caller"),
        }
    }

    /// Constant value, if the coefficient is constant in `x`.
    pub fn as_constant(&self) -> Option<f64> {
        match *self {
            CoefficientSpec::ConstantDrift { mu } => Some(mu),
            CoefficientSpec::ConstantSq { sigma2 } => Some(sigma2),
            CoefficientSpec::ConstantCost { value } => Some(value),
            CoefficientSpec::ZeroCost => Some(0.0),
            CoefficientSpec::OuDrift { a, .. } if a == 0.0 => Some(0.0),
            _ => None,
        }
    }

    fn covers(&self, lo: f64, hi: f64) -> bool {
        match self {
            CoefficientSpec::SampledGrid { xs, .. } => xs[0] <= lo && xs[xs.len() - 1] >= hi,
            _ => true,
        }
    }
}

/// Free-standing form of [`CoefficientSpec::eval`].
pub fn eval_coefficient(spec: &CoefficientSpec, x: f64) -> Result<f64> {
    spec.eval(x)
}

fn first_non_ascending(xs: &[f64]) -> Option<usize> {
    xs.windows(2).position(|w| !(w[1] > w[0])).map(|i| i + 1)
}

fn interpolate(xs: &[f64], values: &[f64], x: f64) -> Result<f64> {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if !(x >= lo && x <= hi) {
        return Err(Error::OutOfRange { x, lo, hi });
    }
    // index of the first node strictly greater than x
    let j = xs.partition_point(|&node| node <= x);
    if j == 0 {
        return Ok(values[0]);
    }
    if j == xs.len() {
        return Ok(values[xs.len() - 1]);
    }
    let i = j - 1;
    if x == xs[i] {
        return Ok(values[i]);
    }
    let t = (x - xs[i]) / (xs[j] - xs[i]);
    Ok(values[i] + t * (values[j] - values[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// `S = [0, b]`, reflection direction `+1` at `0` and `−1` at `b`.
    TwoBarrier { b_barrier: f64 },
    /// `S = [0, ∞)`, reflection at the origin only.
    SingleBarrier,
}

impl Domain {
    pub fn upper(&self) -> Option<f64> {
        match *self {
            Domain::TwoBarrier { b_barrier } => Some(b_barrier),
            Domain::SingleBarrier => None,
        }
    }

    pub fn is_compact(&self) -> bool {
        matches!(self, Domain::TwoBarrier { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub mu: CoefficientSpec,
    pub sigma2: CoefficientSpec,
    pub domain: Domain,
}

impl DiffusionModel {
    pub fn two_barrier(mu: CoefficientSpec, sigma2: CoefficientSpec, b_barrier: f64) -> Self {
        DiffusionModel { mu, sigma2, domain: Domain::TwoBarrier { b_barrier } }
    }

    pub fn single_barrier(mu: CoefficientSpec, sigma2: CoefficientSpec) -> Self {
        DiffusionModel { mu, sigma2, domain: Domain::SingleBarrier }
    }

    /// Reflected Brownian motion with constant drift and variance.
    pub fn rbm(mu: f64, sigma2: f64, b_barrier: f64) -> Self {
        Self::two_barrier(
            CoefficientSpec::ConstantDrift { mu },
            CoefficientSpec::ConstantSq { sigma2 },
            b_barrier,
        )
    }

    /// Reflected Ornstein–Uhlenbeck process with drift `−a(x − c)`.
    pub fn rou(a: f64, c: f64, sigma2: f64, b_barrier: f64) -> Self {
        Self::two_barrier(
            CoefficientSpec::OuDrift { a, c },
            CoefficientSpec::ConstantSq { sigma2 },
            b_barrier,
        )
    }

    pub fn b_barrier(&self) -> Option<f64> {
        self.domain.upper()
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        self.mu.eval_clamped(x)
    }

    #[inline]
    pub fn variance(&self, x: f64) -> f64 {
        self.sigma2.eval_clamped(x)
    }
}

/// `A(t) = ∫₀ᵗ f(X(s)) ds + r₀ L(t) + r_b U(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFunctional {
    pub f: CoefficientSpec,
    pub r0: f64,
    /// Ignored on a single-barrier domain.
    pub rb: f64,
}

impl AdditiveFunctional {
    pub fn new(f: CoefficientSpec, r0: f64, rb: f64) -> Self {
        AdditiveFunctional { f, r0, rb }
    }

    /// Pure boundary functional `r₀ L(t) + r_b U(t)`.
    pub fn boundary(r0: f64, rb: f64) -> Self {
        Self::new(CoefficientSpec::ZeroCost, r0, rb)
    }

    #[inline]
    pub fn cost(&self, x: f64) -> f64 {
        self.f.eval_clamped(x)
    }

    /// Upper boundary weight, zero when the domain has no upper barrier.
    pub fn effective_rb(&self, domain: &Domain) -> f64 {
        if domain.is_compact() {
            self.rb
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Odd, at least 3 (Simpson pairing).
    pub grid_points: usize,
    pub quad_tol: f64,
    pub root_tol: f64,
    pub eig_tol: f64,
    /// Relative width of the bands around region boundaries.
    pub region_eps: f64,
    /// Truncation point for `[0, ∞)`; chosen automatically when absent.
    pub x_max: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_points: 4001,
            quad_tol: 1e-10,
            root_tol: 1e-12,
            eig_tol: 1e-10,
            region_eps: 1e-9,
            x_max: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 || self.grid_points % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid_points must be odd and at least 3, got {}",
                self.grid_points
            )));
        }
        for (name, v) in [
            ("quad_tol", self.quad_tol),
            ("root_tol", self.root_tol),
            ("eig_tol", self.eig_tol),
            ("region_eps", self.region_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(x) = self.x_max {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!("x_max must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

/// A violated modelling hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonPositiveVariance { x: f64, value: f64 },
    NegativeBoundaryWeight { name: String, value: f64 },
    UnboundedCost,
    NonPositiveBarrier { b_barrier: f64 },
    NonPositiveReversion { a: f64 },
    UncoveredDomain { coefficient: String },
    NonFiniteParameter { coefficient: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveVariance { x, value } => {
                write!(f, "σ² must be positive (σ²({x}) = {value})")
            }
            Violation::NegativeBoundaryWeight { name, value } => {
                write!(f, "boundary weights must be nonnegative ({name} = {value})")
            }
            Violation::UnboundedCost => write!(f, "f must be bounded on the domain"),
            Violation::NonPositiveBarrier { b_barrier } => {
                write!(f, "barrier position must be positive (b = {b_barrier})")
            }
            Violation::NonPositiveReversion { a } => {
                write!(f, "mean-reversion rate must be positive (a = {a})")
            }
            Violation::UncoveredDomain { coefficient } => {
                write!(f, "sampled grid for {coefficient} does not cover the domain")
            }
            Violation::NonFiniteParameter { coefficient } => {
                write!(f, "{coefficient} has a non-finite parameter")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(Error::Inadmissible(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "admissible");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks the hypotheses the solvers rely on. Never fails; the report lists
/// every violation found.
pub fn validate(model: &DiffusionModel, functional: &AdditiveFunctional) -> ValidationReport {
    let mut violations = Vec::new();

    let upper = match model.domain {
        Domain::TwoBarrier { b_barrier } => {
            if !(b_barrier > 0.0 && b_barrier.is_finite()) {
                violations.push(Violation::NonPositiveBarrier { b_barrier });
            }
            b_barrier
        }
        Domain::SingleBarrier => SINGLE_BARRIER_PROBE,
    };
    let upper_ok = upper > 0.0 && upper.is_finite();

    for (name, spec) in [("mu", &model.mu), ("sigma2", &model.sigma2), ("f", &functional.f)] {
        if !spec_finite(spec) {
            violations.push(Violation::NonFiniteParameter { coefficient: name.to_string() });
        }
        if let CoefficientSpec::OuDrift { a, .. } = *spec {
            if !(a > 0.0) {
                violations.push(Violation::NonPositiveReversion { a });
            }
        }
        let covered = match model.domain {
            Domain::TwoBarrier { .. } => !upper_ok || spec.covers(0.0, upper),
            // a finite sample set cannot cover [0, ∞)
            Domain::SingleBarrier => !matches!(spec, CoefficientSpec::SampledGrid { .. }),
        };
        if !covered {
            violations.push(Violation::UncoveredDomain { coefficient: name.to_string() });
        }
    }

    if upper_ok {
        if let Some((x, value)) = first_non_positive(&model.sigma2, upper) {
            violations.push(Violation::NonPositiveVariance { x, value });
        }
    }

    let cost_bounded = match (&functional.f, model.domain) {
        (CoefficientSpec::OuDrift { a, .. }, Domain::SingleBarrier) => *a == 0.0,
        (CoefficientSpec::SampledGrid { .. }, Domain::SingleBarrier) => false,
        _ => true,
    };
    if !cost_bounded {
        violations.push(Violation::UnboundedCost);
    }

    for (name, value) in [("r0", functional.r0), ("rb", functional.rb)] {
        if !(value >= 0.0) {
            violations.push(Violation::NegativeBoundaryWeight { name: name.to_string(), value });
        }
    }

    ValidationReport { violations }
}

fn spec_finite(spec: &CoefficientSpec) -> bool {
    match spec {
        CoefficientSpec::ConstantDrift { mu } => mu.is_finite(),
        CoefficientSpec::OuDrift { a, c } => a.is_finite() && c.is_finite(),
        CoefficientSpec::ConstantSq { sigma2 } => sigma2.is_finite(),
        CoefficientSpec::SampledGrid { xs, values } => {
            xs.iter().chain(values).all(|v| v.is_finite())
        }
        CoefficientSpec::ConstantCost { value } => value.is_finite(),
        CoefficientSpec::ZeroCost => true,
    }
}

fn first_non_positive(spec: &CoefficientSpec, upper: f64) -> Option<(f64, f64)> {
    if let CoefficientSpec::SampledGrid { xs, values } = spec {
        // linear interpolation is positive iff every node inside the domain is
        for (&x, &v) in xs.iter().zip(values) {
            if (0.0..=upper).contains(&x) && !(v > 0.0) {
                return Some((x, v));
            }
        }
    }
    (0..VALIDATION_POINTS)
        .map(|i| upper * i as f64 / (VALIDATION_POINTS - 1) as f64)
        .map(|x| (x, spec.eval_clamped(x)))
        .find(|&(_, v)| !(v > 0.0))
}
