//! Standard normal helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub(crate) fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `Φ(hi) − Φ(lo)` without cancellation when both points sit in the same tail.
pub(crate) fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        // upper tail: Q(lo) − Q(hi)
        0.5 * (libm::erfc(lo * FRAC_1_SQRT_2) - libm::erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        normal_cdf(hi) - normal_cdf(lo)
    } else {
        1.0 - normal_cdf(lo) - 0.5 * libm::erfc(hi * FRAC_1_SQRT_2)
    }
}
