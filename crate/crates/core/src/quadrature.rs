//! Composite Simpson integration on uniform grids.
//!
//! Every nested integral in the Poisson and spectral solvers needs the
//! running integral at *every* grid node, so the primitive here is the
//! cumulative table; [`definite_integral`] is its last entry.
//!
//! Even nodes carry the composite Simpson sum. Odd nodes add one half-panel
//! computed with a four-point rule (exact for cubics), so the whole table is
//! exact for cubic integrands.

use crate::error::{Error, Result};

/// Relative tolerance on the spacing of a "uniform" grid.
const UNIFORM_RTOL: f64 = 1e-7;

/// Running integral `∫_{xs[0]}^{xs[k]} g`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeTable {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl CumulativeTable {
    pub fn total(&self) -> f64 {
        *self.values.last().expect("table has at least three nodes")
    }
}

/// `n` equally spaced nodes from `a` to `b`, with both end points exact.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "uniform grid needs at least two nodes");
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + (b - a) * (i as f64 / last) })
        .collect()
}

/// Checks that `grid` is a strictly ascending uniform grid with at least
/// three nodes matching `len`; returns the spacing.
pub fn check_grid(grid: &[f64], len: usize) -> Result<f64> {
    if grid.len() != len {
        return Err(Error::GridMismatch { expected: grid.len(), got: len });
    }
    if grid.len() < 3 {
        return Err(Error::TooFewNodes { required: 3, got: grid.len() });
    }
    if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonAscendingGrid { index: i + 1 });
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if let Some(i) = grid.windows(2).position(|w| ((w[1] - w[0]) - h).abs() > UNIFORM_RTOL * h) {
        return Err(Error::NonUniformGrid { index: i + 1 });
    }
    Ok(h)
}

/// Cumulative integral of the sampled `integrand` over `grid`.
pub fn cumulative_integral(integrand: &[f64], grid: &[f64]) -> Result<CumulativeTable> {
    let h = check_grid(grid, integrand.len())?;
    Ok(CumulativeTable { xs: grid.to_vec(), values: cumulative_uniform(integrand, h) })
}

/// Integral of the sampled `integrand` over the whole of `grid`.
pub fn definite_integral(integrand: &[f64], grid: &[f64]) -> Result<f64> {
    Ok(cumulative_integral(integrand, grid)?.total())
}

/// Integrals `∫_{xs[k]}^{xs[n-1]} g`, accumulated from the right end so that
/// small tails keep their relative accuracy.
pub fn cumulative_from_right(integrand: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let h = check_grid(grid, integrand.len())?;
    let reversed: Vec<f64> = integrand.iter().rev().copied().collect();
    let mut values = cumulative_uniform(&reversed, h);
    values.reverse();
    Ok(values)
}

/// Core recurrence; assumes `f.len() >= 3` and spacing `h`. Whole panels are
/// accumulated with compensated summation so long grids keep full precision.
pub(crate) fn cumulative_uniform(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    debug_assert!(n >= 3);
    let mut values = vec![0.0; n];
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for k in 1..n {
        values[k] = if k % 2 == 0 {
            let y = h / 3.0 * (f[k - 2] + 4.0 * f[k - 1] + f[k]) - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
            sum
        } else if k >= 3 {
            sum + h / 24.0 * (f[k - 3] - 5.0 * f[k - 2] + 19.0 * f[k - 1] + 9.0 * f[k])
        } else if n >= 4 {
            h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else {
            h / 12.0 * (5.0 * f[0] + 8.0 * f[1] - f[2])
        };
    }
    values
}
