//! Closed-form `ψ(θ)` for reflected Brownian motion on `[0, b]` with `f = 0`,
//! `r₀ = 0`, `r_b = 1`.
//!
//! With `m = μ` and `n = μ + θσ²`, the parameter space splits into
//!
//! * `R1`: `θ > 0`,
//! * `R2`: `θ < 0`, `mn ≤ 0`,
//! * `R3`: `θ < 0`, `mn > 0`, `b·mn > −θσ⁴`,
//! * `R4`: `θ < 0`, `mn > 0`, `b·mn < −θσ⁴`,
//! * `B1`: `θ = 0`, and `B2`: the `R3`/`R4` interface.
//!
//! `R1`/`R3` have hyperbolic eigenfunctions with `ψ = (β² − μ²)/(2σ²)` where
//! `β` solves `(1/β) ln[(β − m)(β + n) / ((β + m)(β − n))] = 2b/σ²`;
//! `R2`/`R4` are trigonometric with `ψ = −(ξ² + μ²)/(2σ²)` where
//! `bξ/σ² = arccos(P/√(P² + ξ²θ²σ⁴))`, `P = ξ² + mn`.

use super::{hellmann_feynman, BcResiduals, RbmRegion, RegionTag, SolutionRegion, SpectralSolution};
use crate::error::{Error, Result};
use crate::model::{AdditiveFunctional, CoefficientSpec, DiffusionModel, SolverConfig};
use crate::poisson::{as_rbm, Profile};

const MAX_BISECTIONS: usize = 400;

pub fn classify_region(theta: f64, mu: f64, sigma2: f64, b_barrier: f64, region_eps: f64) -> RegionTag {
    if theta.abs() <= region_eps {
        return RegionTag::B1;
    }
    if theta > 0.0 {
        return RegionTag::R1;
    }
    let mn = mu * (mu + theta * sigma2);
    if mn <= 0.0 {
        return RegionTag::R2;
    }
    let lhs = b_barrier * mn;
    let rhs = -theta * sigma2 * sigma2;
    if (lhs - rhs).abs() <= region_eps * lhs.max(rhs) {
        RegionTag::B2
    } else if lhs > rhs {
        RegionTag::R3
    } else {
        RegionTag::R4
    }
}

/// `ln|β − m| − ln|β + m|` for `β > 0`, without cancellation near `β = 0`.
fn log_ratio(beta: f64, m: f64) -> f64 {
    let am = m.abs();
    if beta < am {
        let r = (2.0 * beta / (am - beta)).ln_1p();
        if m > 0.0 {
            -r
        } else {
            r
        }
    } else {
        (-2.0 * m / (beta + m)).ln_1p()
    }
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, g: impl Fn(f64) -> f64) -> f64 {
    // g(lo) < 0 < g(hi) by construction of the caller
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * mid.abs().max(f64::MIN_POSITIVE) || mid == lo || mid == hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

struct Params {
    mu: f64,
    sigma2: f64,
    b: f64,
    theta: f64,
}

impl Params {
    fn n(&self) -> f64 {
        self.mu + self.theta * self.sigma2
    }

    /// Hyperbolic root equation: decreasing in `β` on the `R1` interval,
    /// increasing on the `R3` interval.
    fn hyperbolic(&self, beta: f64) -> f64 {
        (log_ratio(beta, self.mu) - log_ratio(beta, self.n())) / beta - 2.0 * self.b / self.sigma2
    }

    /// Increasing in `ξ`; root of the trigonometric equation.
    fn trigonometric(&self, xi: f64) -> f64 {
        let p = xi * xi + self.mu * self.n();
        let angle = (-self.theta * self.sigma2 * xi).atan2(p);
        self.b * xi / self.sigma2 - angle
    }

    fn beta_r1(&self, tol: f64) -> Result<f64> {
        let lo = self.mu.abs().max(self.n().abs());
        let mut hi = 2.0 * lo + self.sigma2 / self.b + 1.0;
        let mut expansions = 0;
        while self.hyperbolic(hi) >= 0.0 {
            expansions += 1;
            if expansions > 200 {
                return Err(Error::RootNotBracketed(format!("β root in ({lo}, ∞) for θ = {}", self.theta)));
            }
            hi *= 2.0;
        }
        Ok(bisect(lo, hi, tol, |b| -self.hyperbolic(b)))
    }

    fn beta_r3(&self, tol: f64) -> f64 {
        let hi = self.mu.abs().min(self.n().abs());
        bisect(0.0, hi, tol, |b| if b == 0.0 { -1.0 } else { self.hyperbolic(b) })
    }

    fn xi_trig(&self, tol: f64) -> f64 {
        let hi = std::f64::consts::PI * self.sigma2 / self.b;
        bisect(0.0, hi, tol, |x| if x == 0.0 { -1.0 } else { self.trigonometric(x) })
    }
}

/// Eigenfunction and its derivative for a classified region.
#[derive(Clone, Copy)]
enum Shape {
    Flat,
    Hyperbolic { beta: f64 },
    Trigonometric { xi: f64 },
    Critical,
}

fn eval_shape(shape: Shape, mu: f64, sigma2: f64, x: f64) -> (f64, f64) {
    let k = mu / sigma2;
    match shape {
        Shape::Flat => (1.0, 0.0),
        Shape::Hyperbolic { beta } => {
            let down = (-(beta + mu) * x / sigma2).exp();
            let up = ((beta - mu) * x / sigma2).exp();
            let h = ((beta - mu) * down + (beta + mu) * up) / (2.0 * beta);
            let dh = (beta * beta - mu * mu) * (up - down) / (2.0 * beta * sigma2);
            (h, dh)
        }
        Shape::Trigonometric { xi } => {
            let decay = (-k * x).exp();
            let (s, c) = (xi * x / sigma2).sin_cos();
            let h = decay * (c + mu / xi * s);
            let dh = -decay * (xi * xi + mu * mu) / (xi * sigma2) * s;
            (h, dh)
        }
        Shape::Critical => {
            let decay = (-k * x).exp();
            (decay * (k * x + 1.0), -k * k * x * decay)
        }
    }
}

fn solve_region(theta: f64, mu: f64, sigma2: f64, b: f64, config: &SolverConfig) -> Result<(f64, RbmRegion, Shape)> {
    if !(sigma2 > 0.0) || !(b > 0.0) || !theta.is_finite() || !mu.is_finite() {
        return Err(Error::ClosedFormNotApplicable(format!(
            "need finite θ, μ and σ² > 0, b > 0 (σ² = {sigma2}, b = {b})"
        )));
    }
    let params = Params { mu, sigma2, b, theta };
    let tag = classify_region(theta, mu, sigma2, b, config.region_eps);
    let tol = config.root_tol;
    let (psi, root, shape) = match tag {
        RegionTag::B1 => (0.0, None, Shape::Flat),
        RegionTag::B2 => (-mu * mu / (2.0 * sigma2), None, Shape::Critical),
        RegionTag::R1 | RegionTag::R3 => {
            let beta = if tag == RegionTag::R1 { params.beta_r1(tol)? } else { params.beta_r3(tol) };
            ((beta * beta - mu * mu) / (2.0 * sigma2), Some(beta), Shape::Hyperbolic { beta })
        }
        RegionTag::R2 | RegionTag::R4 => {
            let xi = params.xi_trig(tol);
            (-(xi * xi + mu * mu) / (2.0 * sigma2), Some(xi), Shape::Trigonometric { xi })
        }
    };
    Ok((psi, RbmRegion { tag, auxiliary_root: root }, shape))
}

/// `ψ(θ)` and region only; no eigenfunction.
pub fn rbm_psi(theta: f64, mu: f64, sigma2: f64, b_barrier: f64, config: &SolverConfig) -> Result<(f64, RbmRegion)> {
    let (psi, region, _) = solve_region(theta, mu, sigma2, b_barrier, config)?;
    Ok((psi, region))
}

/// Full closed-form solution with `h` on the solver grid.
pub fn rbm_closed_form_psi(
    theta: f64,
    mu: f64,
    sigma2: f64,
    b_barrier: f64,
    config: &SolverConfig,
) -> Result<SpectralSolution> {
    config.validate()?;
    let (psi, region, shape) = solve_region(theta, mu, sigma2, b_barrier, config)?;
    let model = DiffusionModel::rbm(mu, sigma2, b_barrier);
    let functional = AdditiveFunctional::boundary(0.0, 1.0);
    let profile = Profile::build(&model, &functional, b_barrier, config.grid_points);
    let pairs: Vec<(f64, f64)> = profile.grid.iter().map(|&x| eval_shape(shape, mu, sigma2, x)).collect();
    let h_grid: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let interior_sign_changes = h_grid.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let dpsi = if h_grid.iter().all(|&h| h > 0.0) {
        let ln_h: Vec<f64> = h_grid.iter().map(|h| h.ln()).collect();
        hellmann_feynman(&profile, 0.0, 1.0, &ln_h)
    } else {
        f64::NAN
    };
    let (h0, dh0) = pairs[0];
    let (hb, dhb) = pairs[pairs.len() - 1];
    Ok(SpectralSolution {
        theta,
        psi,
        dpsi,
        bc_residuals: BcResiduals {
            left: (dh0 / h0).abs(),
            right: (-dhb + theta * hb).abs() / hb.hypot(dhb),
        },
        grid: profile.grid,
        h_grid,
        interior_sign_changes,
        region: SolutionRegion::Rbm(region),
    })
}

/// Closed form for a general model/functional pair, refusing anything other
/// than constant-coefficient RBM with `f = 0`, `r₀ = 0`, `r_b = 1`.
pub fn rbm_closed_form_for(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta: f64,
    config: &SolverConfig,
) -> Result<SpectralSolution> {
    let (mu, sigma2, b) = as_rbm(model).ok_or_else(|| {
        Error::ClosedFormNotApplicable("closed form needs constant μ and σ² on [0, b]".to_string())
    })?;
    let zero_cost = match functional.f {
        CoefficientSpec::ZeroCost => true,
        CoefficientSpec::ConstantCost { value } => value == 0.0,
        _ => false,
    };
    if !zero_cost || functional.r0 != 0.0 || functional.rb != 1.0 {
        return Err(Error::ClosedFormNotApplicable(
            "closed form covers only f = 0, r₀ = 0, r_b = 1; use solve_principal".to_string(),
        ));
    }
    rbm_closed_form_psi(theta, mu, sigma2, b, config)
}
