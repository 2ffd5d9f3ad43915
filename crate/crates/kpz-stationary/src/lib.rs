//! Numerics for the stationary measures of open ASEP and their KPZ scaling limit.
//!
//! The crate is organised bottom-up:
//!
//! * [`specfun`]: log-gamma, Bernoulli polynomials, Hurwitz zeta, q-Pochhammer
//!   symbols, Jacobi theta functions and the small-κ expansions of
//!   `log (±e^{-κz}; e^{-κ})_∞`.
//! * [`measure`]: mixed (density plus atoms) measures, panel Gauss-Legendre
//!   quadrature and Markov-kernel chaining.
//! * [`asep`]: the open ASEP itself (generator, exact stationary solve,
//!   Gillespie simulation, multi-species coupling, phase diagram).
//! * [`askey_wilson`]: Askey-Wilson measures and process, and the finite-N
//!   Laplace transform of the stationary height function.
//! * [`cdh`]: continuous dual Hahn and Wilson measures and the continuous dual
//!   Hahn process.
//! * [`kpz`]: the limiting Laplace transform, the one-point formula and the
//!   Brownian case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asep;
pub mod askey_wilson;
pub mod cdh;
pub mod kpz;
pub mod measure;
pub mod specfun;

use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("pole of the gamma function at z = {0}")]
    Pole(f64),
    #[error("argument outside the supported domain: {0}")]
    Domain(String),
    #[error("vanishing factor in q-Pochhammer product at index {index}")]
    ZeroFactor { index: usize },
    #[error("value overflows f64 (log value {0})")]
    Overflow(f64),
    #[error("inadmissible parameters: {0}")]
    Admissibility(String),
    #[error("state space too large: N = {n}, maximum is {max}")]
    SizeGuard { n: usize, max: usize },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("kernels disagree on target support: {0}")]
    MismatchedSupport(String),
    #[error("non-finite integrand value at x = {0}")]
    NonFinite(f64),
    #[error("quadrature did not reach relative tolerance {tol:e} (last value {value})")]
    Unconverged { value: f64, tol: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use num_complex::Complex64;
