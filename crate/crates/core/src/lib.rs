//! Estimation and verification engine for stochastic differential equations
//! driven by generalized G-Brownian motion.
//!
//! The driving noise carries volatility and drift uncertainty described by a
//! set Theta of pairs (gamma, mu): volatility factors and drift rates. Upper
//! and lower expectations of exit-time functionals are estimated by
//! simulating controlled Euler paths under a finite family of controls and
//! taking the best policy; the associated fully nonlinear elliptic equation
//! is solved on a grid with a monotone scheme and policy iteration, which
//! gives an independent route to the same values. The remaining modules
//! supply the pieces: a small expression language for coefficients, the
//! uncertainty set and its support function G, domain geometry with refined
//! exit detection, and closed-form exit-time moment bounds used to cap and
//! sanity-check the simulations.

pub mod dynamics;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod montecarlo;
pub mod pde;
pub mod uncertainty;

pub use expr::Expression;
