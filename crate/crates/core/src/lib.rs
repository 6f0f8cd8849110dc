//! Law-of-large-numbers, central-limit and large-deviations constants for
//! additive functionals of one-dimensional reflecting diffusions.
//!
//! For a diffusion `dX = μ(X)dt + σ(X)dB + dL − dU` reflected at `0` (and
//! optionally at `b`), and the functional
//!
//! ```text
//! A(t) = ∫₀ᵗ f(X(s)) ds + r₀ L(t) + r_b U(t)
//! ```
//!
//! the crate computes
//!
//! * `α = lim A(t)/t` and the CLT variance `η²` ([`poisson`]),
//! * the scaled cumulant generating function `ψ(θ)` as a principal
//!   Sturm–Liouville eigenvalue with Robin boundary conditions ([`spectral`]),
//! * the rate function `I(y) = sup_θ [θy − ψ(θ)]` and tail exponents ([`rate`]),
//!
//! and checks all of them against a reflected Euler–Maruyama simulator
//! ([`montecarlo`]).

pub mod error;
pub mod model;
pub mod montecarlo;
pub(crate) mod ode;
pub mod poisson;
pub mod quadrature;
pub mod rate;
pub mod spectral;
pub(crate) mod special;

pub use error::{Error, Result};
pub use model::{
    AdditiveFunctional, CoefficientSpec, DiffusionModel, Domain, SolverConfig, ValidationReport,
    Violation,
};
