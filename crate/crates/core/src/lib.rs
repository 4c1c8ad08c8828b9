//! Physics-informed neural networks for stiff chemical kinetics.
//!
//! The crate pairs classical reference integrators (variable-order BDF and
//! Dormand-Prince 5(4)) with a small from-scratch training stack (dual
//! numbers, a reverse-mode tape and an MLP with Adam) so that a network can
//! be trained either on the full stiff kinetics or on a quasi-steady-state
//! reduced system in which fast, low-concentration species are replaced by
//! algebraic closures.

pub mod linalg;
pub mod autodiff;
pub mod integrators;
pub mod mechanism;
pub mod pinn;
pub mod qssa;
