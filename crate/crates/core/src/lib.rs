//! Numerical laboratory for the forced, critically dissipative surface
//! quasi-geostrophic (SQG) equation on the torus `[0, 2π]²`:
//!
//! ```text
//! ∂ₜΘ + U·∇Θ + ΛΘ = f,    U = (R₂Θ, −R₁Θ),    Λ = (−Δ)^{1/2}
//! ```
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`] — Fourier representation of mean-free fields, symbol
//!   multipliers (Λˢ, Riesz transforms, derivatives), dealiasing and norms.
//! * [`dynamics`] — steady states with explicit forcing, the quadratic
//!   nonlinearity and integrating-factor RK4 time stepping.
//! * [`linear`] — the linearised operator about a steady state, its dense
//!   finite sections, rightmost eigenpairs and the linear semigroup.
//! * [`instability`] — growth of small perturbations along an unstable
//!   eigenfunction, growth-rate fits and escape-time regressions.
//! * [`modulus`] — the modulus of continuity `ω_B`, the advection,
//!   dissipation and forcing bounds, and the breakdown inequality check.

pub mod dynamics;
pub mod error;
pub mod instability;
pub mod linear;
pub mod modulus;
pub mod quadrature;
pub mod spectral;

mod eigen;
mod fft;

pub use error::{Result, SqgError};
