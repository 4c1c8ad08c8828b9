//! Physics-informed training of a time-to-concentration network.
//!
//! The network is trained on the collocation residual
//! `dy/dt - f(y)` of either the full kinetics (regular PINN) or a
//! quasi-steady-state reduced system (stiff PINN), where only the slow
//! species are network outputs and the fast ones are recovered from the
//! algebraic closure.

mod checkpoint;
mod eval;
mod loss;
mod model;
mod optim;
mod sampling;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{DomainError, TapeError};
use crate::mechanism::Mechanism;
use crate::qssa::{QssaError, ReducedSystem};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use eval::{default_eval_grid, evaluate_rmse, reconstruct_qss_profile, Predictor, QssProfile};
pub use loss::{residual_loss, training_loss, LossEvaluation};
pub use model::{gelu, hard_ic_transform, parameter_count, xavier_init, MlpModel, OutputTransform};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use sampling::{sample_collocation, Sampling};
pub use train::{train, LossRecord, TrainOutcome, TrainingConfig};

/// RNG stream for parameter initialisation.
pub const STREAM_INIT: u64 = 0;
/// RNG stream for collocation sampling.
pub const STREAM_COLLOCATION: u64 = 1;
/// RNG stream for mini-batch shuffling.
pub const STREAM_SHUFFLE: u64 = 2;

/// Independent, reproducible generator for `(seed, stream)`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("time {0} is outside the network's domain (log-time input needs t > 0)")]
    InvalidTime(f64),
    #[error("species mismatch: {0}")]
    SpeciesMismatch(String),
    #[error("empty collocation batch")]
    EmptyBatch,
    #[error("non-finite gradient; update aborted")]
    NonFiniteGradient,
    #[error("non-finite loss at update {step} (loss {loss}, batch t in [{t_lo:e}, {t_hi:e}], |theta|_max {param_max:e})")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        t_lo: f64,
        t_hi: f64,
        param_max: f64,
    },
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Closure(#[from] QssaError),
}

impl From<std::io::Error> for PinnError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// The system whose residual a network is trained on.
#[derive(Debug, Clone, Copy)]
pub enum PinnSystem<'a> {
    /// Every species is a network output.
    Full(&'a Mechanism),
    /// Only non-QSS species are outputs; QSS species come from the closure.
    Reduced(&'a ReducedSystem),
}

impl PinnSystem<'_> {
    pub fn mechanism(&self) -> &Mechanism {
        match self {
            Self::Full(m) => m,
            Self::Reduced(r) => r.base(),
        }
    }

    /// Mechanism indices of the network outputs, in output order.
    pub fn trained_indices(&self) -> Vec<usize> {
        match self {
            Self::Full(m) => (0..m.n_species()).collect(),
            Self::Reduced(r) => r.partition().non_qss_indices().to_vec(),
        }
    }

    pub fn trained_species(&self) -> Vec<String> {
        let names = self.mechanism().species();
        self.trained_indices().iter().map(|&i| names[i].clone()).collect()
    }

    pub fn n_trained(&self) -> usize {
        self.trained_indices().len()
    }

    pub fn initial_values(&self) -> Vec<f64> {
        let y0 = self.mechanism().initial_concentrations();
        self.trained_indices().iter().map(|&i| y0[i]).collect()
    }
}

/// A network together with the data needed to turn its outputs into
/// concentrations: `y = y0 + t * (scale ⊙ N(ln t))` under the hard-IC
/// transform, `y = scale ⊙ N(t)` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Pinn {
    pub model: MlpModel,
    pub species: Vec<String>,
    pub y0: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Pinn {
    /// Wraps `model` for `system`; `scale` defaults to ones.
    pub fn new(model: MlpModel, system: &PinnSystem, scale: Option<Vec<f64>>) -> Result<Self, PinnError> {
        let species = system.trained_species();
        let scale = scale.unwrap_or_else(|| vec![1.0; species.len()]);
        Self::from_parts(model, species, system.initial_values(), scale)
    }

    pub fn from_parts(model: MlpModel, species: Vec<String>, y0: Vec<f64>, scale: Vec<f64>) -> Result<Self, PinnError> {
        let n = model.output_width();
        if species.len() != n || y0.len() != n || scale.len() != n {
            return Err(PinnError::SpeciesMismatch(format!(
                "network has {n} outputs but {} species, {} initial values, {} scales",
                species.len(),
                y0.len(),
                scale.len()
            )));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(PinnError::InvalidConfig("output scales must be positive".into()));
        }
        Ok(Self { model, species, y0, scale })
    }

    /// Predicted concentrations at one time.
    pub fn predict(&self, t: f64) -> Result<Vec<f64>, PinnError> {
        Ok(self.predict_dual(crate::autodiff::Dual::constant(t))?.0)
    }

    /// Concentrations and their time derivatives at one time, by forward
    /// mode.
    pub fn predict_dual(&self, t: crate::autodiff::Dual) -> Result<(Vec<f64>, Vec<f64>), PinnError> {
        use crate::autodiff::Dual;
        let t = Dual::new(t.value, 1.0);
        let y: Vec<Dual> = match self.model.transform() {
            OutputTransform::HardIc => {
                let scaled = self.scaled_model();
                hard_ic_transform(&scaled, &self.y0, t)?
            }
            OutputTransform::None => self
                .model
                .forward(t)?
                .into_iter()
                .zip(&self.scale)
                .map(|(n, &s)| n * s)
                .collect(),
        };
        Ok((y.iter().map(|d| d.value).collect(), y.iter().map(|d| d.tangent).collect()))
    }

    /// The model with `scale` folded into its last layer.
    fn scaled_model(&self) -> MlpModel {
        if self.scale.iter().all(|&s| s == 1.0) {
            return self.model.clone();
        }
        let mut m = self.model.clone();
        let widths = m.widths().to_vec();
        let (fan_in, fan_out) = (widths[widths.len() - 2], widths[widths.len() - 1]);
        let n = m.n_params();
        let start = n - fan_out * fan_in - fan_out;
        let p = m.params_mut();
        for i in 0..fan_out {
            for j in 0..fan_in {
                p[start + i * fan_in + j] *= self.scale[i];
            }
            p[n - fan_out + i] *= self.scale[i];
        }
        m
    }

    /// Batched predictions, one row per time.
    pub fn predict_many(&self, times: &[f64]) -> Result<ndarray::Array2<f64>, PinnError> {
        let n = times.len();
        let width = self.model.output_width();
        let mut inputs = ndarray::Array2::zeros((n, 1));
        for (i, &t) in times.iter().enumerate() {
            inputs[[i, 0]] = match self.model.transform() {
                OutputTransform::HardIc if t == 0.0 => 0.0,
                _ => self.model.input(t)?,
            };
        }
        let raw = self.model.forward_batch(&inputs);
        let mut out = ndarray::Array2::zeros((n, width));
        for i in 0..n {
            for j in 0..width {
                let v = raw[[i, j]] * self.scale[j];
                out[[i, j]] = match self.model.transform() {
                    OutputTransform::HardIc => self.y0[j] + times[i] * v,
                    OutputTransform::None => v,
                };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
