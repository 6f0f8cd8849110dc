//! Scaled cumulant generating function `ψ(θ)` as a principal eigenvalue.
//!
//! For fixed `θ`, `ψ(θ)` is the eigenvalue with a positive eigenfunction of
//!
//! ```text
//! μh′ + (σ²/2)h″ + (θf − ψ)h = 0,   h′(0) + θr₀h(0) = 0,   −h′(b) + θr_b h(b) = 0.
//! ```
//!
//! In Sturm–Liouville form `−(a h′)′ + b h = λ c h` with `λ = −ψ`, the
//! principal eigenvalue is the smallest `λ`. [`solve_principal`] finds it by
//! shooting on the Prüfer angle `φ = atan2(h, h′)`: `φ(b)` is increasing in
//! `λ`, and the `n`-th eigenfunction is the one whose angle lands on the
//! right boundary condition after exactly `n` extra half-turns.

mod finite_difference;
mod rbm;

pub use finite_difference::{fd_eigenvalues, fd_principal, FdEigen};
pub use rbm::{classify_region, rbm_closed_form_for, rbm_closed_form_psi, rbm_psi};

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, AdditiveFunctional, DiffusionModel, SolverConfig};
use crate::ode::{integrate, integrate_on_grid, Tolerance};
use crate::poisson::Profile;
use crate::quadrature::cumulative_uniform;

const MAX_BRACKET_EXPANSIONS: usize = 60;
const MAX_BISECTIONS: usize = 300;
/// Step used for the finite-difference slope of `ψ` at the origin.
pub const ALPHA_CHECK_STEP: f64 = 1e-3;

/// Sturm–Liouville coefficients on the solver grid. `a` and `c` share the
/// factor `exp(∫₀ˣ 2μ/σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlCoefficients {
    pub grid: Vec<f64>,
    pub sl_weight_a: Vec<f64>,
    pub sl_potential: Vec<f64>,
    pub sl_density_c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    R1,
    R2,
    R3,
    R4,
    B1,
    B2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbmRegion {
    pub tag: RegionTag,
    /// `β(θ)` in the hyperbolic regions, `ξ(θ)` in the trigonometric ones.
    pub auxiliary_root: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolutionRegion {
    Rbm(RbmRegion),
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcResiduals {
    /// `|h′(0) + θr₀h(0)| / |h(0)|`
    pub left: f64,
    /// `|−h′(b) + θr_b h(b)| / √(h(b)² + h′(b)²)`
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub theta: f64,
    pub psi: f64,
    /// `ψ′(θ)` from the Hellmann–Feynman identity.
    pub dpsi: f64,
    pub grid: Vec<f64>,
    /// Eigenfunction with `h(0) = 1`.
    pub h_grid: Vec<f64>,
    pub interior_sign_changes: usize,
    pub bc_residuals: BcResiduals,
    pub region: SolutionRegion,
}

/// Sampled `ψ` with slopes, ready for Legendre transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiCurve {
    pub thetas: Vec<f64>,
    pub psis: Vec<f64>,
    pub dpsis: Vec<f64>,
    /// Central difference of `ψ` at the origin.
    pub alpha_check: f64,
    pub convexity_violations: usize,
}

pub fn sl_coefficients(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta: f64,
    config: &SolverConfig,
) -> Result<SlCoefficients> {
    let profile = compact_profile(model, functional, config)?;
    let a: Vec<f64> = profile.log_scale.iter().map(|l| l.exp()).collect();
    let sl_potential =
        (0..a.len()).map(|i| -2.0 * theta * profile.f[i] / profile.sigma2[i] * a[i]).collect();
    let sl_density_c = (0..a.len()).map(|i| 2.0 / profile.sigma2[i] * a[i]).collect();
    Ok(SlCoefficients { grid: profile.grid, sl_weight_a: a, sl_potential, sl_density_c })
}

fn compact_profile(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    config: &SolverConfig,
) -> Result<Profile> {
    config.validate()?;
    validate(model, functional).into_result()?;
    let b = model.b_barrier().ok_or(Error::NonCompactDomain)?;
    Ok(Profile::build(model, functional, b, config.grid_points))
}

/// Prüfer system `(φ, ln ρ)` with `h = ρ sin φ`, `h′ = ρ cos φ`.
struct Shooter<'a> {
    model: &'a DiffusionModel,
    functional: &'a AdditiveFunctional,
    theta: f64,
    b: f64,
    tol: Tolerance,
}

impl Shooter<'_> {
    fn rhs(&self, lambda: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
        move |x, y| {
            let s2 = self.model.variance(x);
            let p = 2.0 * self.model.drift(x) / s2;
            let q = 2.0 * (self.theta * self.functional.cost(x) + lambda) / s2;
            let (s, c) = y[0].sin_cos();
            [c * c + p * s * c + q * s * s, s * c * (1.0 - q) - p * c * c]
        }
    }

    fn start(&self) -> [f64; 2] {
        let phi0 = 1f64.atan2(-self.theta * self.functional.r0);
        [phi0, -phi0.sin().ln()]
    }

    fn target(&self, index: usize) -> f64 {
        1f64.atan2(self.theta * self.functional.rb) + index as f64 * PI
    }

    /// `φ(b) − target` for the given `λ`; increasing in `λ`.
    fn mismatch(&self, lambda: f64, index: usize) -> Result<f64> {
        let mut h = self.b / 64.0;
        let end = integrate(&self.rhs(lambda), 0.0, self.start(), self.b, self.tol, &mut h)?;
        Ok(end[0] - self.target(index))
    }

    fn bracket(&self, bound: f64, index: usize) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (-bound, bound);
        let mut expansions = 0;
        while self.mismatch(lo, index)? >= 0.0 {
            expansions += 1;
            if expansions > MAX_BRACKET_EXPANSIONS {
                return Err(Error::BracketFailure { lo, hi, expansions });
            }
            lo *= 2.0;
        }
        while self.mismatch(hi, index)? <= 0.0 {
            expansions += 1;
            if expansions > MAX_BRACKET_EXPANSIONS {
                return Err(Error::BracketFailure { lo, hi, expansions });
            }
            hi *= 2.0;
        }
        Ok((lo, hi))
    }

    fn eigenvalue(&self, bound: f64, index: usize, root_tol: f64) -> Result<f64> {
        let (mut lo, mut hi) = self.bracket(bound, index)?;
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= root_tol * mid.abs().max(1.0) || mid == lo || mid == hi {
                break;
            }
            if self.mismatch(mid, index)? > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn lambda_bound(profile: &Profile, functional: &AdditiveFunctional, theta: f64, b: f64) -> f64 {
    let sup_f = profile.f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sup_s2 = profile.sigma2.iter().copied().fold(0.0f64, f64::max);
    theta.abs() * (sup_f + (functional.r0 + functional.rb) * sup_s2 / b) + 1.0
}

/// `ψ′(θ)` from a positive eigenfunction given as `ln h` on the profile grid:
/// `[∫(2f/σ²) a h² + r₀a(0)h(0)² + r_b a(b)h(b)²] / ∫(2/σ²) a h²`.
pub(crate) fn hellmann_feynman(profile: &Profile, r0: f64, rb: f64, ln_h: &[f64]) -> f64 {
    let n = ln_h.len();
    let log_w: Vec<f64> = (0..n).map(|i| profile.log_scale[i] + 2.0 * ln_h[i]).collect();
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - shift).exp()).collect();
    let cost: Vec<f64> = (0..n).map(|i| 2.0 * profile.f[i] / profile.sigma2[i] * w[i]).collect();
    let mass: Vec<f64> = (0..n).map(|i| 2.0 / profile.sigma2[i] * w[i]).collect();
    let numerator = cumulative_uniform(&cost, profile.h)[n - 1] + r0 * w[0] + rb * w[n - 1];
    numerator / cumulative_uniform(&mass, profile.h)[n - 1]
}

fn sign_changes(h: &[f64]) -> usize {
    h.windows(2).filter(|w| w[0] * w[1] < 0.0 || (w[1] == 0.0 && w[0] != 0.0)).count()
}

/// Principal eigenpair: `ψ(θ) = −λ₁` with `h > 0` and `h(0) = 1`.
pub fn solve_principal(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta: f64,
    config: &SolverConfig,
) -> Result<SpectralSolution> {
    let solution = solve_eigen(model, functional, theta, 0, config)?;
    if solution.interior_sign_changes > 0 || solution.h_grid.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::PositivityViolation {
            theta,
            sign_changes: solution.interior_sign_changes,
        });
    }
    Ok(solution)
}

/// Eigenpair number `index` (0 = principal) of the tilted problem. `psi` is
/// reported as `−λ_index`; `dpsi` is only meaningful for the principal pair.
pub fn solve_eigen(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta: f64,
    index: usize,
    config: &SolverConfig,
) -> Result<SpectralSolution> {
    let profile = compact_profile(model, functional, config)?;
    let b = profile.grid[profile.grid.len() - 1];
    if theta == 0.0 && index == 0 {
        let ones = vec![0.0; profile.grid.len()];
        return Ok(SpectralSolution {
            theta,
            psi: 0.0,
            dpsi: hellmann_feynman(&profile, functional.r0, functional.rb, &ones),
            h_grid: vec![1.0; profile.grid.len()],
            grid: profile.grid,
            interior_sign_changes: 0,
            bc_residuals: BcResiduals { left: 0.0, right: 0.0 },
            region: SolutionRegion::Numeric,
        });
    }
    let step_tol = (config.eig_tol * 1e-3).max(1e-14);
    let shooter = Shooter {
        model,
        functional,
        theta,
        b,
        tol: Tolerance { rtol: step_tol, atol: step_tol },
    };
    let bound = lambda_bound(&profile, functional, theta, b);
    let lambda = shooter.eigenvalue(bound, index, config.root_tol)?;

    let states = integrate_on_grid(&shooter.rhs(lambda), &profile.grid, shooter.start(), shooter.tol)?;
    let h_grid: Vec<f64> = states.iter().map(|s| s[1].exp() * s[0].sin()).collect();
    let phi_b = states[states.len() - 1][0];
    let right = (-phi_b.cos() + theta * functional.rb * phi_b.sin()).abs();
    let left = {
        let (s, c) = states[0][0].sin_cos();
        (c + theta * functional.r0 * s).abs() / s.abs()
    };
    let interior_sign_changes = sign_changes(&h_grid);
    let dpsi = if interior_sign_changes == 0 && h_grid.iter().all(|&h| h > 0.0) {
        let ln_h: Vec<f64> = states.iter().map(|s| s[1] + s[0].sin().ln()).collect();
        hellmann_feynman(&profile, functional.r0, functional.rb, &ln_h)
    } else {
        f64::NAN
    };
    Ok(SpectralSolution {
        theta,
        psi: -lambda,
        dpsi,
        grid: profile.grid,
        h_grid,
        interior_sign_changes,
        bc_residuals: BcResiduals { left, right },
        region: SolutionRegion::Numeric,
    })
}

/// `ψ` on an ascending `theta_grid` containing `0`, solved in parallel.
pub fn psi_curve(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta_grid: &[f64],
    config: &SolverConfig,
) -> Result<PsiCurve> {
    check_theta_grid(theta_grid)?;
    let solve = |theta: f64| solve_principal(model, functional, theta, config).map(|s| (s.psi, s.dpsi));
    let solved: Vec<(f64, f64)> = theta_grid.par_iter().map(|&t| solve(t)).collect::<Result<_>>()?;
    let plus = solve(ALPHA_CHECK_STEP)?.0;
    let minus = solve(-ALPHA_CHECK_STEP)?.0;
    let (psis, dpsis): (Vec<f64>, Vec<f64>) = solved.into_iter().unzip();
    Ok(PsiCurve {
        convexity_violations: convexity_violations(theta_grid, &psis),
        thetas: theta_grid.to_vec(),
        psis,
        dpsis,
        alpha_check: (plus - minus) / (2.0 * ALPHA_CHECK_STEP),
    })
}

/// `n` equally spaced values from `lo` to `hi`, with `0` snapped exactly when
/// it lies on the grid.
pub fn theta_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let t = if i == n - 1 { hi } else { lo + step * i as f64 };
            if t.abs() < 1e-9 * step { 0.0 } else { t }
        })
        .collect()
}

fn check_theta_grid(thetas: &[f64]) -> Result<()> {
    if thetas.len() < 3 {
        return Err(Error::InvalidPsiCurve(format!("need at least 3 θ values, got {}", thetas.len())));
    }
    if let Some(i) = thetas.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidPsiCurve(format!("θ grid not ascending at index {}", i + 1)));
    }
    if !thetas.contains(&0.0) {
        return Err(Error::InvalidPsiCurve("θ grid must contain 0".to_string()));
    }
    Ok(())
}

/// Count of second differences below `−1e−8·max(1, |ψ|)`; divided
/// differences are used on non-uniform grids.
pub fn convexity_violations(thetas: &[f64], psis: &[f64]) -> usize {
    (1..thetas.len().saturating_sub(1))
        .filter(|&k| {
            let left = (psis[k] - psis[k - 1]) / (thetas[k] - thetas[k - 1]);
            let right = (psis[k + 1] - psis[k]) / (thetas[k + 1] - thetas[k]);
            let second = (right - left) * 0.5 * (thetas[k + 1] - thetas[k - 1]);
            second < -1e-8 * psis[k].abs().max(1.0)
        })
        .count()
}

impl PsiCurve {
    /// Curve from bare samples; slopes by finite differences (one-sided at the
    /// ends, three-point in the interior).
    pub fn from_samples(thetas: Vec<f64>, psis: Vec<f64>) -> Result<Self> {
        check_theta_grid(&thetas)?;
        if psis.len() != thetas.len() || psis.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidPsiCurve("ψ samples must be finite and match θ".to_string()));
        }
        let n = thetas.len();
        let dpsis: Vec<f64> = (0..n)
            .map(|k| {
                let (i, j, l) = match k {
                    0 => (0, 1, 2),
                    k if k == n - 1 => (n - 3, n - 2, n - 1),
                    k => (k - 1, k, k + 1),
                };
                quadratic_slope([thetas[i], thetas[j], thetas[l]], [psis[i], psis[j], psis[l]], thetas[k])
            })
            .collect();
        let zero = thetas.iter().position(|&t| t == 0.0).unwrap();
        let alpha_check = dpsis[zero];
        Ok(PsiCurve {
            convexity_violations: convexity_violations(&thetas, &psis),
            thetas,
            psis,
            dpsis,
            alpha_check,
        })
    }

    pub fn theta_range(&self) -> (f64, f64) {
        (self.thetas[0], self.thetas[self.thetas.len() - 1])
    }

    fn segment(&self, theta: f64) -> Result<usize> {
        let (lo, hi) = self.theta_range();
        if !(theta >= lo && theta <= hi) {
            return Err(Error::OutOfRange { x: theta, lo, hi });
        }
        let k = self.thetas.partition_point(|&t| t <= theta);
        Ok(k.clamp(1, self.thetas.len() - 1) - 1)
    }

    fn hermite(&self, k: usize, theta: f64) -> (f64, f64) {
        let (t0, t1) = (self.thetas[k], self.thetas[k + 1]);
        let h = t1 - t0;
        let s = (theta - t0) / h;
        let (y0, y1) = (self.psis[k], self.psis[k + 1]);
        let (m0, m1) = (self.dpsis[k] * h, self.dpsis[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let value = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        let slope = ((6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (value, slope)
    }

    /// Cubic Hermite interpolant of `ψ`.
    pub fn eval(&self, theta: f64) -> Result<f64> {
        Ok(self.hermite(self.segment(theta)?, theta).0)
    }

    /// Derivative of the interpolant.
    pub fn eval_slope(&self, theta: f64) -> Result<f64> {
        Ok(self.hermite(self.segment(theta)?, theta).1)
    }
}

fn quadratic_slope(t: [f64; 3], y: [f64; 3], at: f64) -> f64 {
    let d01 = (y[1] - y[0]) / (t[1] - t[0]);
    let d12 = (y[2] - y[1]) / (t[2] - t[1]);
    let d012 = (d12 - d01) / (t[2] - t[0]);
    d01 + d012 * ((at - t[0]) + (at - t[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientSpec;

    fn config() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn sl_coefficient_examples() {
        let zero = AdditiveFunctional::boundary(1.0, 1.0);
        let sl = sl_coefficients(&DiffusionModel::rbm(0.5, 1.0, 1.0), &zero, 0.0, &config()).unwrap();
        assert!(sl.sl_potential.iter().all(|&b| b == 0.0));

        let sl = sl_coefficients(&DiffusionModel::rbm(0.0, 2.0, 1.0), &zero, 1.0, &config()).unwrap();
        assert!(sl.sl_weight_a.iter().all(|&a| a == 1.0));
        assert!(sl.sl_density_c.iter().all(|&c| c == 1.0));

        let sl = sl_coefficients(&DiffusionModel::rbm(1.0, 1.0, 1.0), &zero, 1.0, &config()).unwrap();
        for (i, x) in sl.grid.iter().enumerate() {
            let a = (2.0 * x).exp();
            assert!((sl.sl_weight_a[i] / a - 1.0).abs() < 1e-12);
            assert!((sl.sl_density_c[i] / (2.0 * a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_barrier_rejected() {
        let model = DiffusionModel::single_barrier(
            CoefficientSpec::ConstantDrift { mu: -1.0 },
            CoefficientSpec::ConstantSq { sigma2: 1.0 },
        );
        let err = solve_principal(&model, &AdditiveFunctional::boundary(1.0, 0.0), 0.5, &config())
            .unwrap_err();
        assert!(matches!(err, Error::NonCompactDomain));
        assert!(err.to_string().contains("compact"));
    }

    #[test]
    fn theta_zero_is_trivial() {
        let s = solve_principal(
            &DiffusionModel::rou(1.0, 0.5, 1.0, 1.0),
            &AdditiveFunctional::boundary(1.0, 1.0),
            0.0,
            &config(),
        )
        .unwrap();
        assert_eq!(s.psi, 0.0);
        assert!(s.h_grid.iter().all(|&h| h == 1.0));
    }

    #[test]
    fn constant_cost_gives_linear_psi() {
        let f = AdditiveFunctional::new(CoefficientSpec::ConstantCost { value: 1.0 }, 0.0, 0.0);
        let curve = psi_curve(&DiffusionModel::rbm(0.3, 1.0, 1.0), &f, &theta_grid(-2.0, 2.0, 9), &config())
            .unwrap();
        for (t, p) in curve.thetas.iter().zip(&curve.psis) {
            assert!((p - t).abs() < 1e-10, "{t}: {p}");
        }
        for d in &curve.dpsis {
            assert!((d - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_functional_gives_zero_psi() {
        let f = AdditiveFunctional::boundary(0.0, 0.0);
        let curve = psi_curve(&DiffusionModel::rbm(0.3, 1.0, 1.0), &f, &theta_grid(-1.0, 1.0, 5), &config())
            .unwrap();
        assert!(curve.psis.iter().all(|p| p.abs() < 1e-10));
    }

    #[test]
    fn principal_below_next_eigenvalue() {
        let model = DiffusionModel::rbm(1.0, 1.0, 1.0);
        let f = AdditiveFunctional::boundary(0.5, 1.0);
        let first = solve_eigen(&model, &f, 0.7, 0, &config()).unwrap();
        let second = solve_eigen(&model, &f, 0.7, 1, &config()).unwrap();
        assert!(-second.psi > -first.psi);
        assert_eq!(second.interior_sign_changes, 1);
    }

    #[test]
    fn theta_grid_snaps_zero() {
        let g = theta_grid(-3.0, 3.0, 61);
        assert_eq!(g[30], 0.0);
        assert_eq!(g[0], -3.0);
        assert_eq!(g[60], 3.0);
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let thetas = theta_grid(-1.0, 1.0, 5);
        let psi = |t: f64| t * t * t - 0.5 * t * t + 2.0 * t;
        let dpsi = |t: f64| 3.0 * t * t - t + 2.0;
        let curve = PsiCurve {
            psis: thetas.iter().map(|&t| psi(t)).collect(),
            dpsis: thetas.iter().map(|&t| dpsi(t)).collect(),
            thetas,
            alpha_check: 2.0,
            convexity_violations: 0,
        };
        for t in [-0.9, -0.3, 0.01, 0.77] {
            assert!((curve.eval(t).unwrap() - psi(t)).abs() < 1e-14);
            assert!((curve.eval_slope(t).unwrap() - dpsi(t)).abs() < 1e-13);
        }
        assert!(matches!(curve.eval(1.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn from_samples_slopes_exact_for_quadratics() {
        let thetas = theta_grid(-1.0, 1.0, 7);
        let psis: Vec<f64> = thetas.iter().map(|t| 0.5 * t * t + t).collect();
        let curve = PsiCurve::from_samples(thetas.clone(), psis).unwrap();
        for (t, d) in thetas.iter().zip(&curve.dpsis) {
            assert!((d - (t + 1.0)).abs() < 1e-12);
        }
        assert!((curve.alpha_check - 1.0).abs() < 1e-12);
        assert!(PsiCurve::from_samples(vec![1.0, 2.0, 3.0], vec![0.0; 3]).is_err());
    }

    #[test]
    fn concave_samples_are_flagged() {
        let thetas = theta_grid(-1.0, 1.0, 5);
        let psis: Vec<f64> = thetas.iter().map(|t| -t * t).collect();
        assert_eq!(convexity_violations(&thetas, &psis), 3);
    }
}
