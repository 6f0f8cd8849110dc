//! Legendre–Fenchel transform of a sampled `ψ` curve.
//!
//! `I(y) = sup_θ [θy − ψ(θ)]` is evaluated on the cubic Hermite interpolant
//! of a [`PsiCurve`]; nothing here re-solves an eigenproblem.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::PsiCurve;

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendrePoint {
    pub value: f64,
    pub arg_theta: f64,
    /// The maximizer sits on the edge of the θ grid with the objective still
    /// increasing outward, so `value` is only a lower bound.
    pub boundary_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
    pub arg_thetas: Vec<f64>,
    pub domain_flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailExponent {
    pub exponent: f64,
    pub theta_z: f64,
}

fn check_convex(psi: &PsiCurve) -> Result<()> {
    if psi.convexity_violations > 0 {
        return Err(Error::InvalidPsiCurve(format!(
            "ψ curve has {} convexity violations",
            psi.convexity_violations
        )));
    }
    Ok(())
}

/// Maximizes a unimodal `g` on `[lo, hi]` by golden-section search.
fn golden_max(mut lo: f64, mut hi: f64, tol: f64, g: impl Fn(f64) -> f64) -> f64 {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    while hi - lo > tol * (1.0 + lo.abs().max(hi.abs())) {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + GOLDEN * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - GOLDEN * (hi - lo);
            g1 = g(x1);
        }
    }
    0.5 * (lo + hi)
}

/// `I(y)` with its maximizer; refines the best grid point by golden section
/// over the two neighbouring grid intervals.
pub fn legendre(psi: &PsiCurve, y: f64) -> Result<LegendrePoint> {
    legendre_with_tol(psi, y, DEFAULT_TOL)
}

pub fn legendre_with_tol(psi: &PsiCurve, y: f64, tol: f64) -> Result<LegendrePoint> {
    check_convex(psi)?;
    let n = psi.thetas.len();
    let objective = |t: f64| t * y - psi.eval(t).expect("θ inside the curve");
    let best = (0..n)
        .max_by(|&i, &j| {
            let gi = psi.thetas[i] * y - psi.psis[i];
            let gj = psi.thetas[j] * y - psi.psis[j];
            gi.total_cmp(&gj)
        })
        .expect("curve is non-empty");
    let lo = psi.thetas[best.saturating_sub(1)];
    let hi = psi.thetas[(best + 1).min(n - 1)];
    let mut arg = golden_max(lo, hi, tol, objective);
    let mut value = objective(arg);
    for &edge in [lo, hi].iter() {
        let v = objective(edge);
        if v > value {
            value = v;
            arg = edge;
        }
    }
    let boundary_flag = (best == 0 && y < psi.dpsis[0]) || (best == n - 1 && y > psi.dpsis[n - 1]);
    Ok(LegendrePoint { value: value.max(0.0), arg_theta: arg, boundary_flag })
}

/// `I` on a set of points (evaluated in parallel).
pub fn rate_function(psi: &PsiCurve, ys: &[f64]) -> Result<RateFunction> {
    check_convex(psi)?;
    let points: Vec<LegendrePoint> = ys.par_iter().map(|&y| legendre(psi, y)).collect::<Result<_>>()?;
    Ok(RateFunction {
        ys: ys.to_vec(),
        values: points.iter().map(|p| p.value).collect(),
        arg_thetas: points.iter().map(|p| p.arg_theta).collect(),
        domain_flags: points.iter().map(|p| p.boundary_flag).collect(),
    })
}

/// Decay rate of `P(A(t) ≥ tz)`: solves `ψ′(θ_z) = z` on the interpolant
/// and returns `θ_z z − ψ(θ_z)`.
pub fn tail_exponent(psi: &PsiCurve, z: f64) -> Result<TailExponent> {
    check_convex(psi)?;
    let n = psi.thetas.len();
    let (lo_slope, hi_slope) = (psi.dpsis[0], psi.dpsis[n - 1]);
    if !(z >= lo_slope && z <= hi_slope) {
        return Err(Error::SlopeOutOfRange { value: z, lo: lo_slope, hi: hi_slope });
    }
    let k = psi.dpsis.partition_point(|&d| d < z).clamp(1, n - 1);
    let (mut lo, mut hi) = (psi.thetas[k - 1], psi.thetas[k]);
    let slope = |t: f64| psi.eval_slope(t).expect("θ inside the curve") - z;
    if psi.dpsis[k - 1] == z {
        hi = lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let theta_z = 0.5 * (lo + hi);
    Ok(TailExponent { exponent: theta_z * z - psi.eval(theta_z)?, theta_z })
}
