//! Generalized Poisson equation on `[0, b]` (or `[0, ∞)`).
//!
//! Solves `μu′ + (σ²/2)u″ = f − α` with `u′(0) = r₀`, `u′(b) = −r_b` through
//! the integrating factor `w(x) = exp(∫₀ˣ 2μ/σ²)`:
//!
//! ```text
//! α   = (r₀ + r_b w(b) + ∫ 2f w/σ²) / (2 ∫ w/σ²)
//! u′  = (r₀ + ∫₀ˣ 2(f − α) w/σ²) / w(x)
//! p   = (w/σ²) / ∫ w/σ²
//! η²  = ∫ u′² σ² p
//! ```
//!
//! `w` is only ever stored relative to its maximum on the grid, so steep
//! drifts do not overflow. `u′` is evaluated from whichever end keeps the
//! accumulated integral free of cancellation; the two forms are algebraically
//! identical and the boundary residuals compare them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate, AdditiveFunctional, CoefficientSpec, DiffusionModel, Domain, SolverConfig,
};
use crate::quadrature::{cumulative_from_right, cumulative_uniform, uniform_grid};
use crate::special::{normal_mass, normal_pdf};

/// Fraction of the truncated range whose contribution decides convergence of
/// the improper integrals on `[0, ∞)`.
const TAIL_FRACTION: f64 = 0.25;
const MAX_TRUNCATION_DOUBLINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `sup |μu′ + (σ²/2)u″ − (f − α)| / (1 + |f − α|)` over interior nodes.
    pub ode_sup: f64,
    pub bc0: f64,
    /// Absent on a single-barrier domain.
    pub bcb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub density: Vec<f64>,
    pub eta2: f64,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UPrime {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `|u′(0) − r₀|` recomputed by integrating from the upper end.
    pub bc0: f64,
    /// `|u′(b) + r_b|` recomputed by integrating from the origin.
    pub bcb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// Coefficients and integrating factor sampled on the solver grid.
pub(crate) struct Profile {
    pub grid: Vec<f64>,
    pub h: f64,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub f: Vec<f64>,
    /// `Λ(x) = ∫₀ˣ 2μ/σ²`.
    pub log_scale: Vec<f64>,
    /// `max Λ` over the grid.
    pub shift: f64,
    /// `exp(Λ − shift)`.
    pub weight: Vec<f64>,
}

impl Profile {
    pub fn build(
        model: &DiffusionModel,
        functional: &AdditiveFunctional,
        upper: f64,
        n: usize,
    ) -> Self {
        let grid = uniform_grid(0.0, upper, n);
        let h = upper / (n - 1) as f64;
        let mu: Vec<f64> = grid.iter().map(|&x| model.drift(x)).collect();
        let sigma2: Vec<f64> = grid.iter().map(|&x| model.variance(x)).collect();
        let f: Vec<f64> = grid.iter().map(|&x| functional.cost(x)).collect();
        let ratio: Vec<f64> = mu.iter().zip(&sigma2).map(|(m, s)| 2.0 * m / s).collect();
        let log_scale = cumulative_uniform(&ratio, h);
        let shift = log_scale.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weight = log_scale.iter().map(|l| (l - shift).exp()).collect();
        Profile { grid, h, mu, sigma2, f, log_scale, shift, weight }
    }

    fn len(&self) -> usize {
        self.grid.len()
    }

    /// `∫ w/σ²` running table.
    fn speed_table(&self) -> Vec<f64> {
        let g: Vec<f64> = self.weight.iter().zip(&self.sigma2).map(|(w, s)| w / s).collect();
        cumulative_uniform(&g, self.h)
    }

    fn alpha(&self, r0: f64, rb: f64) -> f64 {
        let n = self.len();
        let cost: Vec<f64> = (0..n).map(|i| 2.0 * self.f[i] * self.weight[i] / self.sigma2[i]).collect();
        let cost_integral = *cumulative_uniform(&cost, self.h).last().unwrap();
        let denominator = 2.0 * self.speed_table()[n - 1];
        (r0 * (-self.shift).exp() + rb * self.weight[n - 1] + cost_integral) / denominator
    }

    /// Relative contribution of the last `TAIL_FRACTION` of the range to
    /// `∫ w/σ²`.
    fn tail_increment(&self) -> f64 {
        let table = self.speed_table();
        let n = table.len();
        let k = ((1.0 - TAIL_FRACTION) * (n - 1) as f64).round() as usize;
        let total = table[n - 1];
        if total > 0.0 && total.is_finite() {
            (total - table[k]) / total
        } else {
            f64::INFINITY
        }
    }

    fn u_prime(&self, r0: f64, rb: f64, alpha: f64, compact: bool) -> UPrime {
        let n = self.len();
        let integrand: Vec<f64> = (0..n)
            .map(|i| 2.0 * (self.f[i] - alpha) * self.weight[i] / self.sigma2[i])
            .collect();
        let from_left = cumulative_uniform(&integrand, self.h);
        let from_right =
            cumulative_from_right(&integrand, &self.grid).expect("profile grid is uniform");
        let left = |i: usize| (r0 * (-self.shift).exp() + from_left[i]) / self.weight[i];
        let right = |i: usize| (-rb * self.weight[n - 1] - from_right[i]) / self.weight[i];

        let mut prefix_max = vec![0.0; n];
        let mut running = 0.0f64;
        for i in 0..n {
            running = running.max(self.weight[i]);
            prefix_max[i] = running;
        }
        let mut suffix_max = vec![0.0; n];
        running = 0.0;
        for i in (0..n).rev() {
            running = running.max(self.weight[i]);
            suffix_max[i] = running;
        }

        let mut values: Vec<f64> =
            (0..n).map(|i| if prefix_max[i] <= suffix_max[i] { left(i) } else { right(i) }).collect();
        values[0] = r0;
        if compact && prefix_max[n - 1] > suffix_max[n - 1] {
            values[n - 1] = -rb;
        }
        UPrime {
            grid: self.grid.clone(),
            values,
            bc0: (right(0) - r0).abs(),
            bcb: compact.then(|| (left(n - 1) + rb).abs()),
        }
    }

    fn density(&self) -> Vec<f64> {
        let table = self.speed_table();
        let z = table[table.len() - 1];
        self.weight.iter().zip(&self.sigma2).map(|(w, s)| w / s / z).collect()
    }

    fn ode_residual(&self, u_prime: &[f64], alpha: f64) -> f64 {
        let n = self.len();
        (1..n - 1)
            .map(|i| {
                let second = (u_prime[i + 1] - u_prime[i - 1]) / (2.0 * self.h);
                let rhs = self.f[i] - alpha;
                (self.mu[i] * u_prime[i] + 0.5 * self.sigma2[i] * second - rhs).abs()
                    / (1.0 + rhs.abs())
            })
            .fold(0.0, f64::max)
    }
}

fn admissible(model: &DiffusionModel, functional: &AdditiveFunctional, config: &SolverConfig) -> Result<()> {
    config.validate()?;
    validate(model, functional).into_result()
}

fn require_two_barrier(model: &DiffusionModel) -> Result<f64> {
    model.b_barrier().ok_or_else(|| {
        Error::DomainMismatch("operation requires a two-barrier domain [0, b]".to_string())
    })
}

/// Builds the profile over the solver domain, checking ergodicity on `[0, ∞)`.
fn domain_profile(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
) -> Result<Profile> {
    match model.domain {
        Domain::TwoBarrier { b_barrier } => {
            Ok(Profile::build(model, functional, b_barrier, config.grid_points))
        }
        Domain::SingleBarrier => {
            let x_max = single_barrier_truncation(model, config)?;
            ergodic_profile(model, functional, config, x_max)
        }
    }
}

fn ergodic_profile(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
    x_max: f64,
) -> Result<Profile> {
    let profile = Profile::build(model, functional, x_max, config.grid_points);
    let relative_increment = profile.tail_increment();
    if relative_increment > config.quad_tol {
        return Err(Error::NonErgodic { x_max, relative_increment });
    }
    Ok(profile)
}

/// Truncation point for `[0, ∞)`: `config.x_max` when set, otherwise the
/// first of `1, 2, 4, …` at which the last quarter of `∫ w/σ²` contributes
/// less than `quad_tol`. Gives up with [`Error::NonErgodic`].
pub fn single_barrier_truncation(model: &DiffusionModel, config: &SolverConfig) -> Result<f64> {
    if let Some(x_max) = config.x_max {
        return Ok(x_max);
    }
    let zero = AdditiveFunctional::boundary(0.0, 0.0);
    let mut x_max = 1.0;
    let mut last = f64::INFINITY;
    for _ in 0..MAX_TRUNCATION_DOUBLINGS {
        let profile = Profile::build(model, &zero, x_max, config.grid_points);
        last = profile.tail_increment();
        if last <= config.quad_tol {
            return Ok(x_max);
        }
        x_max *= 2.0;
    }
    Err(Error::NonErgodic { x_max: x_max / 2.0, relative_increment: last })
}

/// `α` on `[0, b]` by quadrature of the closed expression in `r₀, r_b, f`.
pub fn compute_alpha_two_barrier(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
) -> Result<f64> {
    admissible(model, functional, config)?;
    let b = require_two_barrier(model)?;
    let profile = Profile::build(model, functional, b, config.grid_points);
    Ok(profile.alpha(functional.r0, functional.rb))
}

/// `α` on `[0, ∞)` with the improper integrals truncated at `x_max`.
///
/// Returns [`Error::NonErgodic`] when `∫ w/σ²` is still growing at `x_max`
/// (relative increment over the last quarter above `quad_tol`).
pub fn compute_alpha_single_barrier(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
    x_max: f64,
) -> Result<f64> {
    admissible(model, functional, config)?;
    if model.domain != Domain::SingleBarrier {
        return Err(Error::DomainMismatch(
            "operation requires a single-barrier domain [0, ∞)".to_string(),
        ));
    }
    if !(x_max > 0.0 && x_max.is_finite()) {
        return Err(Error::InvalidConfig(format!("x_max must be positive, got {x_max}")));
    }
    let profile = ergodic_profile(model, functional, config, x_max)?;
    Ok(profile.alpha(functional.r0, 0.0))
}

/// `α` for either domain; single-barrier truncation follows
/// [`single_barrier_truncation`].
pub fn compute_alpha(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
) -> Result<f64> {
    match model.domain {
        Domain::TwoBarrier { .. } => compute_alpha_two_barrier(model, functional, config),
        Domain::SingleBarrier => {
            let x_max = single_barrier_truncation(model, config)?;
            compute_alpha_single_barrier(model, functional, config, x_max)
        }
    }
}

pub fn compute_u_prime(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    alpha: f64,
    config: &SolverConfig,
) -> Result<UPrime> {
    admissible(model, functional, config)?;
    let profile = domain_profile(model, functional, config)?;
    let rb = functional.effective_rb(&model.domain);
    Ok(profile.u_prime(functional.r0, rb, alpha, model.domain.is_compact()))
}

pub fn stationary_density(model: &DiffusionModel, config: &SolverConfig) -> Result<Density> {
    let zero = AdditiveFunctional::boundary(0.0, 0.0);
    admissible(model, &zero, config)?;
    let profile = domain_profile(model, &zero, config)?;
    Ok(Density { values: profile.density(), grid: profile.grid })
}

/// `η² = ∫ u′² σ² p` on a shared grid.
pub fn compute_eta2(
    model: &DiffusionModel,
    grid: &[f64],
    u_prime: &[f64],
    density: &[f64],
) -> Result<f64> {
    let h = crate::quadrature::check_grid(grid, u_prime.len())?;
    if density.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: density.len() });
    }
    let integrand: Vec<f64> = grid
        .iter()
        .zip(u_prime.iter().zip(density))
        .map(|(&x, (&du, &p))| du * du * model.variance(x) * p)
        .collect();
    Ok(cumulative_uniform(&integrand, h).last().copied().unwrap().max(0.0))
}

/// Full pipeline `α → u′ → p → η²` with residual diagnostics.
pub fn solve(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
) -> Result<PoissonSolution> {
    admissible(model, functional, config)?;
    let profile = domain_profile(model, functional, config)?;
    let compact = model.domain.is_compact();
    let rb = functional.effective_rb(&model.domain);
    let alpha = profile.alpha(functional.r0, rb);
    let u_prime = profile.u_prime(functional.r0, rb, alpha, compact);
    let density = profile.density();
    let eta2 = compute_eta2(model, &profile.grid, &u_prime.values, &density)?;
    let ode_sup = profile.ode_residual(&u_prime.values, alpha);
    Ok(PoissonSolution {
        alpha,
        residuals: Residuals { ode_sup, bc0: u_prime.bc0, bcb: u_prime.bcb },
        grid: profile.grid,
        u_prime: u_prime.values,
        density,
        eta2,
    })
}

/// Closed-form solution for reflected Brownian motion on `[0, b]` with
/// `f = 0` and constant `μ, σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbmPoisson {
    pub mu: f64,
    pub sigma2: f64,
    pub b_barrier: f64,
    pub r0: f64,
    pub rb: f64,
    /// `ξ = 2μ/σ²`.
    pub xi: f64,
    /// True when `|ξ b|` fell below `region_eps` and the `μ = 0` formulas were used.
    pub zero_drift: bool,
    pub alpha: f64,
    /// Closed-form variance; for `μ ≠ 0` this is the three-term expansion of
    /// `∫ u′² σ² p`, kept as a cross-check of the quadrature value.
    pub eta2: f64,
}

pub fn closed_form_rbm(
    mu: f64,
    sigma2: f64,
    b_barrier: f64,
    r0: f64,
    rb: f64,
    region_eps: f64,
) -> Result<RbmPoisson> {
    if !(sigma2 > 0.0) || !(b_barrier > 0.0) {
        return Err(Error::ClosedFormNotApplicable(format!(
            "need σ² > 0 and b > 0 (σ² = {sigma2}, b = {b_barrier})"
        )));
    }
    let xi = 2.0 * mu / sigma2;
    let zero_drift = (xi * b_barrier).abs() < region_eps;
    let (alpha, eta2) = if zero_drift {
        let eta2 = if r0 + rb > 0.0 {
            sigma2 * (r0.powi(3) + rb.powi(3)) / (3.0 * (r0 + rb))
        } else {
            0.0
        };
        (sigma2 * (r0 + rb) / (2.0 * b_barrier), eta2)
    } else {
        let xb = xi * b_barrier;
        let growth = xb.exp_m1();
        let alpha = mu * (r0 + rb * xb.exp()) / growth;
        let (c, d) = rbm_u_prime_coefficients(xb, r0, rb);
        let eta2 = sigma2 * (c * c * (-xb).exp() - c * d * 2.0 * xb / growth + d * d);
        (alpha, eta2)
    };
    Ok(RbmPoisson { mu, sigma2, b_barrier, r0, rb, xi, zero_drift, alpha, eta2 })
}

/// `u′(x) = C e^{−ξx} − D`.
fn rbm_u_prime_coefficients(xb: f64, r0: f64, rb: f64) -> (f64, f64) {
    let denom = -(-xb).exp_m1();
    ((r0 + rb) / denom, (r0 * (-xb).exp() + rb) / denom)
}

impl RbmPoisson {
    pub fn u_prime(&self, x: f64) -> f64 {
        if self.zero_drift {
            self.r0 - (self.r0 + self.rb) / self.b_barrier * x
        } else {
            let (c, d) = rbm_u_prime_coefficients(self.xi * self.b_barrier, self.r0, self.rb);
            c * (-self.xi * x).exp() - d
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if self.zero_drift {
            1.0 / self.b_barrier
        } else {
            self.xi * (self.xi * x).exp() / (self.xi * self.b_barrier).exp_m1()
        }
    }
}

/// Closed-form `α`, `u′` and `p` for the reflected Ornstein–Uhlenbeck
/// process `μ(x) = −a(x − c)` on `[0, b]` with `f = 0`. `η²` has no closed
/// form and comes from quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuPoisson {
    pub a: f64,
    pub c: f64,
    pub sigma2: f64,
    pub b_barrier: f64,
    pub r0: f64,
    pub rb: f64,
    pub alpha: f64,
}

pub fn closed_form_ou(a: f64, c: f64, sigma2: f64, b_barrier: f64, r0: f64, rb: f64) -> Result<OuPoisson> {
    if !(a > 0.0) || !(sigma2 > 0.0) || !(b_barrier > 0.0) {
        return Err(Error::ClosedFormNotApplicable(format!(
            "need a > 0, σ² > 0, b > 0 (a = {a}, σ² = {sigma2}, b = {b_barrier})"
        )));
    }
    let mut ou = OuPoisson { a, c, sigma2, b_barrier, r0, rb, alpha: 0.0 };
    // numerator and denominator both scaled by exp(−ac²/σ²)
    let numerator = r0 * (-a * c * c / sigma2).exp()
        + rb * (-a * (b_barrier - c).powi(2) / sigma2).exp();
    let denominator = 2.0 / sigma2 * ou.gaussian_integral(b_barrier);
    ou.alpha = numerator / denominator;
    Ok(ou)
}

impl OuPoisson {
    fn scale(&self) -> f64 {
        (2.0 * self.a / self.sigma2).sqrt()
    }

    /// `∫₀ˣ exp(−a(y − c)²/σ²) dy`.
    fn gaussian_integral(&self, x: f64) -> f64 {
        let k = self.scale();
        (std::f64::consts::PI * self.sigma2 / self.a).sqrt()
            * normal_mass(-self.c * k, (x - self.c) * k)
    }

    pub fn u_prime(&self, x: f64) -> f64 {
        let spread = self.a * (x - self.c).powi(2) / self.sigma2;
        self.r0 * (spread - self.a * self.c * self.c / self.sigma2).exp()
            - 2.0 * self.alpha / self.sigma2 * spread.exp() * self.gaussian_integral(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        let k = self.scale();
        k * normal_pdf((x - self.c) * k) / normal_mass(-self.c * k, (self.b_barrier - self.c) * k)
    }
}

/// True when the model is a constant-coefficient reflected Brownian motion.
pub fn as_rbm(model: &DiffusionModel) -> Option<(f64, f64, f64)> {
    match (&model.mu, &model.sigma2, model.domain) {
        (
            CoefficientSpec::ConstantDrift { mu },
            CoefficientSpec::ConstantSq { sigma2 },
            Domain::TwoBarrier { b_barrier },
        ) => Some((*mu, *sigma2, b_barrier)),
        _ => None,
    }
}
