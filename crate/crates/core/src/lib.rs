//! Solver for semilinear differential-algebraic equations
//! `d/dt[A x] + B x = f(t, x)` with a regular pencil `λA + B` of index at most 1.

pub mod cli;
pub mod config;
pub mod dae_model;
pub mod diagnostics;
pub mod integrators;
pub mod linalg;
pub mod models;
pub mod pencil;
