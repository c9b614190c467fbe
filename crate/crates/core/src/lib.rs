//! Truncated-Fourier reduction machinery for the quasi-periodically forced
//! quasi-linear fifth-order KdV equation
//!
//! `u_t + u_xxxxx + 10 u u_xxx + 20 u_x u_xx + 30 u^2 u_x - 6 u_xx u_xxxxx - 18 u_xxx u_xxxx = d_x f(omega t, x)`
//!
//! on `T^v x T` with `omega = lambda * omega_bar`.
//!
//! Layers, bottom up: [`spectral`] fields and norms, [`composition`]
//! changes of variables, [`decay`] operator matrices, [`linearized`] residual
//! and linearization, [`regularize`] the constant-coefficient conjugation,
//! [`kam`] the reducibility loop and approximate inverse, [`sieve`]
//! non-resonance checks and [`driver`] the outer Newton iteration.

pub mod checks;
pub mod composition;
pub mod decay;
pub mod driver;
pub mod error;
mod grid;
pub mod kam;
pub mod linearized;
pub mod regularize;
pub mod sieve;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use spectral::{DivisorFloor, FourierField, LambdaFamily, NormParams, Truncation};
