//! Adam with bias correction.

use super::PinnError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates and the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One update `theta -= lr * m_hat / (sqrt(v_hat) + eps)`. A non-finite
/// gradient leaves both parameters and state untouched.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<(), PinnError> {
    assert_eq!(params.len(), grad.len(), "gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state length mismatch");
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(PinnError::NonFiniteGradient);
    }
    state.step += 1;
    let k = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(k);
    let c2 = 1.0 - ADAM_BETA2.powi(k);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}
