//! Reverse-over-forward differentiation.
//!
//! Training needs `d loss / d theta` where the loss itself contains
//! `dy/dt` of the network output. Only one input direction (time) is ever
//! differentiated in forward mode, so every tape node carries a value and a
//! tangent channel; the reverse sweep then propagates adjoints of both, which
//! yields the mixed second derivatives exactly.
//!
//! [`Dual`] provides the same forward-mode rules for scalar evaluation
//! outside the tape.

mod dual;
mod tape;

use thiserror::Error;

pub use dual::{Dual, Scalar};
pub use tape::{Gradients, Tape, TapeError, Unary, Var};

/// Argument outside the domain of a differentiated function.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{op} is not differentiable at {value}")]
pub struct DomainError {
    pub op: &'static str,
    pub value: f64,
}

impl DomainError {
    pub(crate) fn new(op: &'static str, value: f64) -> Self {
        Self { op, value }
    }
}

/// Loss value with its gradient in parameter-flattening order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub loss_value: f64,
    pub gradient: Vec<f64>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// Tanh-approximated GELU and its first two derivatives.
pub fn gelu_derivatives(x: f64) -> (f64, f64, f64) {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    let d2u = 6.0 * GELU_CUBIC * SQRT_2_OVER_PI * x;
    let th = u.tanh();
    let sech2 = 1.0 - th * th;
    let g = 0.5 * x * (1.0 + th);
    let d1 = 0.5 * (1.0 + th) + 0.5 * x * sech2 * du;
    let d2 = sech2 * du + 0.5 * x * sech2 * (d2u - 2.0 * th * du * du);
    (g, d1, d2)
}
