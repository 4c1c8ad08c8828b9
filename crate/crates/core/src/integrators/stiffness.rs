//! Jacobian-spectrum stiffness diagnostics.

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{eigenvalues, LinalgError};
use crate::mechanism::StateVector;

/// Largest supported dimension for the dense eigen-solve.
pub const MAX_SPECTRUM_DIM: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StiffnessError {
    #[error("spectrum is empty")]
    EmptySpectrum,
    #[error("all eigenvalues are numerically zero; stiffness ratio undefined")]
    AllZero,
    #[error("dimension {0} exceeds the dense eigen-solver limit of {MAX_SPECTRUM_DIM}")]
    TooLarge(usize),
    #[error("Jacobian evaluation failed: {0}")]
    Jacobian(String),
    #[error(transparent)]
    Eigen(#[from] LinalgError),
}

/// Eigenvalues of the Jacobian returned by `jacobian` at `state`.
pub fn stiffness_spectrum<F, E>(jacobian: F, state: &StateVector) -> Result<Vec<Complex64>, StiffnessError>
where
    F: FnOnce(&StateVector) -> Result<Array2<f64>, E>,
    E: std::fmt::Display,
{
    let n = state.y.len();
    if n > MAX_SPECTRUM_DIM {
        return Err(StiffnessError::TooLarge(n));
    }
    let jac = jacobian(state).map_err(|e| StiffnessError::Jacobian(e.to_string()))?;
    Ok(eigenvalues(jac.view())?)
}

/// `max|lambda| / min|lambda|` over eigenvalues that are not negligible
/// (`|lambda| >= 1e-12 * max|lambda|`).
pub fn stiffness_ratio(spectrum: &[Complex64]) -> Result<f64, StiffnessError> {
    if spectrum.is_empty() {
        return Err(StiffnessError::EmptySpectrum);
    }
    let max = spectrum.iter().map(|l| l.norm()).fold(0.0, f64::max);
    if max == 0.0 || !max.is_finite() {
        return Err(StiffnessError::AllZero);
    }
    let cutoff = 1e-12 * max;
    let min = spectrum
        .iter()
        .map(|l| l.norm())
        .filter(|&m| m >= cutoff)
        .fold(f64::INFINITY, f64::min);
    Ok(max / min.max(1e-300))
}
