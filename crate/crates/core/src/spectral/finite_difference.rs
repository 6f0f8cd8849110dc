//! Finite-volume discretization of the tilted Sturm–Liouville problem, used
//! as an independent check on the shooting solver.
//!
//! Nodes `x_i = iΔ`; interior cells have width `Δ`, the two boundary cells
//! `Δ/2`, and the Robin conditions enter through the boundary fluxes. The
//! resulting pencil `K h = λ M h` has symmetric tridiagonal `K` and diagonal
//! `M`, so eigenvalues come from Sturm-count bisection and eigenvectors
//! from inverse iteration.

use crate::error::{Error, Result};
use crate::model::{validate, AdditiveFunctional, DiffusionModel};
use crate::poisson::Profile;

#[derive(Debug, Clone, PartialEq)]
pub struct FdEigen {
    /// `ψ = −λ` for each requested index, Richardson-extrapolated between
    /// `cells` and `2·cells`.
    pub psis: Vec<f64>,
    /// Principal eigenvector on the fine grid, normalized to `h(0) = 1`.
    pub principal: Vec<f64>,
    pub grid: Vec<f64>,
}

struct Pencil {
    diag: Vec<f64>,
    off: Vec<f64>,
}

fn pencil(model: &DiffusionModel, functional: &AdditiveFunctional, theta: f64, cells: usize) -> Result<(Pencil, Vec<f64>)> {
    let b = model.b_barrier().ok_or(Error::NonCompactDomain)?;
    let profile = Profile::build(model, functional, b, cells + 1);
    let n = cells + 1;
    let d = profile.h;
    let lam = &profile.log_scale;
    let shift = profile.shift;
    let a: Vec<f64> = lam.iter().map(|l| (l - shift).exp()).collect();
    let a_half: Vec<f64> = (0..cells).map(|i| (0.5 * (lam[i] + lam[i + 1]) - shift).exp()).collect();
    let width = |i: usize| if i == 0 || i == n - 1 { 0.5 * d } else { d };

    let mut k_diag = vec![0.0; n];
    let mut k_off = vec![0.0; cells];
    for i in 0..cells {
        let flux = a_half[i] / d;
        k_diag[i] += flux;
        k_diag[i + 1] += flux;
        k_off[i] = -flux;
    }
    k_diag[0] -= theta * functional.r0 * a[0];
    k_diag[n - 1] -= theta * functional.rb * a[n - 1];
    let mut mass = vec![0.0; n];
    for i in 0..n {
        let c = 2.0 / profile.sigma2[i] * a[i];
        k_diag[i] += width(i) * (-theta * profile.f[i] * c);
        mass[i] = width(i) * c;
    }
    // symmetric form M^{-1/2} K M^{-1/2}
    let scale: Vec<f64> = mass.iter().map(|m| m.sqrt().recip()).collect();
    let diag = (0..n).map(|i| k_diag[i] * scale[i] * scale[i]).collect();
    let off = (0..cells).map(|i| k_off[i] * scale[i] * scale[i + 1]).collect();
    Ok((Pencil { diag, off }, scale))
}

impl Pencil {
    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.diag.len() {
            let e2 = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] };
            q = self.diag[i] - x - if i == 0 { 0.0 } else { e2 / q };
            if q == 0.0 {
                q = -f64::EPSILON * (self.diag[i].abs() + x.abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            (lo.min(self.diag[i] - r), hi.max(self.diag[i] + r))
        })
    }

    fn eigenvalue(&self, index: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.count_below(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T − σI) y = rhs` by the Thomas algorithm.
    fn shifted_solve(&self, sigma: f64, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pivot = self.diag[0] - sigma;
        y[0] = rhs[0] / pivot;
        for i in 1..n {
            c[i - 1] = self.off[i - 1] / pivot;
            pivot = self.diag[i] - sigma - self.off[i - 1] * c[i - 1];
            if pivot == 0.0 {
                pivot = f64::EPSILON;
            }
            y[i] = (rhs[i] - self.off[i - 1] * y[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        y
    }

    fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.diag.len();
        let sigma = lambda - 1e-10 * lambda.abs().max(1.0);
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        for _ in 0..4 {
            v = self.shifted_solve(sigma, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// `ψ` for eigen-indices `0..count`, extrapolated from `cells` and `2·cells`.
pub fn fd_eigenvalues(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta: f64,
    cells: usize,
    count: usize,
) -> Result<FdEigen> {
    validate(model, functional).into_result()?;
    if cells < 4 {
        return Err(Error::TooFewNodes { required: 5, got: cells + 1 });
    }
    let (coarse, _) = pencil(model, functional, theta, cells)?;
    let (fine, scale) = pencil(model, functional, theta, 2 * cells)?;
    let psis = (0..count)
        .map(|k| -(4.0 * fine.eigenvalue(k) - coarse.eigenvalue(k)) / 3.0)
        .collect();
    let v = fine.eigenvector(fine.eigenvalue(0));
    let h: Vec<f64> = v.iter().zip(&scale).map(|(v, s)| v * s).collect();
    let principal = h.iter().map(|x| x / h[0]).collect();
    let b = model.b_barrier().ok_or(Error::NonCompactDomain)?;
    let grid = crate::quadrature::uniform_grid(0.0, b, 2 * cells + 1);
    Ok(FdEigen { psis, principal, grid })
}

/// Principal `ψ(θ)` from the finite-volume scheme.
pub fn fd_principal(
    model: &DiffusionModel,
    functional: &AdditiveFunctional,
    theta: f64,
    cells: usize,
) -> Result<f64> {
    Ok(fd_eigenvalues(model, functional, theta, cells, 1)?.psis[0])
}
