//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

/// One trial step; returns the fifth-order solution and the scaled error norm.
fn trial<const N: usize>(
    rhs: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    h: f64,
    tol: Tolerance,
) -> ([f64; N], f64) {
    let mut k = [[0.0; N]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            for i in 0..N {
                ys[i] += h * A[s][j] * kj[i];
            }
        }
        k[s] = rhs(t + C[s] * h, &ys);
    }
    let mut next = *y;
    let mut err = 0.0f64;
    for i in 0..N {
        let mut high = 0.0;
        let mut low = 0.0;
        for s in 0..7 {
            high += B5[s] * k[s][i];
            low += B4[s] * k[s][i];
        }
        next[i] += h * high;
        let scale = tol.atol + tol.rtol * y[i].abs().max(next[i].abs());
        err = err.max((h * (high - low)).abs() / scale);
    }
    (next, err)
}

/// Integrates `y′ = rhs(t, y)` from `t0` to `t1`, returning `y(t1)`.
/// `h` carries the step-size guess in and the last accepted step out.
pub(crate) fn integrate<const N: usize>(
    rhs: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t1: f64,
    tol: Tolerance,
    h: &mut f64,
) -> Result<[f64; N]> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0);
    }
    let mut t = t0;
    let mut y = y0;
    let mut step = h.abs().min(span.abs()).max(span.abs() * 1e-12).copysign(span);
    for _ in 0..MAX_STEPS {
        let remaining = t1 - t;
        let last = step.abs() >= remaining.abs();
        let trial_step = if last { remaining } else { step };
        let (next, err) = trial(rhs, t, &y, trial_step, tol);
        if !err.is_finite() {
            step *= 0.1;
            continue;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            y = next;
            if last {
                *h = step.abs();
                return Ok(y);
            }
            t += trial_step;
            step *= factor;
        } else {
            step = trial_step * factor.min(0.9);
        }
        if step.abs() < span.abs() * 1e-15 {
            return Err(Error::Integration(format!("step size underflow at t = {t}")));
        }
    }
    Err(Error::Integration(format!("exceeded {MAX_STEPS} steps between {t0} and {t1}")))
}

/// Solution at every node of `grid`, starting from `y0` at `grid[0]`.
pub(crate) fn integrate_on_grid<const N: usize>(
    rhs: &impl Fn(f64, &[f64; N]) -> [f64; N],
    grid: &[f64],
    y0: [f64; N],
    tol: Tolerance,
) -> Result<Vec<[f64; N]>> {
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0);
    let mut h = grid.get(1).map_or(1.0, |g| g - grid[0]);
    for w in grid.windows(2) {
        let y = integrate(rhs, w[0], *out.last().unwrap(), w[1], tol, &mut h)?;
        out.push(y);
    }
    Ok(out)
}
