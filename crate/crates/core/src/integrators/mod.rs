//! Reference integrators and stiffness diagnostics.
//!
//! [`integrate_bdf`] is the stiff ground-truth solver; [`integrate_dopri5`]
//! is the explicit solver used for reduced systems and for demonstrating
//! stiffness through step counts. Both use the weighted RMS error norm
//! `err_i / (atol_i + rtol * |y_i|)`.

mod bdf;
mod dopri5;
mod stiffness;
mod trajectory;

use ndarray::Array2;
use thiserror::Error;

use crate::mechanism::Mechanism;

pub use bdf::{backward_euler_step, integrate_bdf};
pub use dopri5::integrate_dopri5;
pub use stiffness::{stiffness_ratio, stiffness_spectrum, StiffnessError};
pub use trajectory::{read_trajectory_csv, write_trajectory_csv, TrajectoryCsvError};

/// Failure reported by an [`OdeSystem`] while evaluating its right-hand side.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct SystemError(pub String);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("maximum number of steps ({0}) exceeded at t = {1}")]
    MaxStepsExceeded(usize, f64),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("Newton iteration failed to converge at t = {0}")]
    NewtonFailure(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("output time {0} lies outside the integration span")]
    OutputOutsideSpan(f64),
    #[error("system evaluation failed at t = {t}: {source}")]
    System { t: f64, source: SystemError },
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// An autonomous or time-dependent ODE system `dy/dt = f(t, y)`.
///
/// `rhs` and `jacobian` take `&mut self` so implementations may keep
/// warm-start caches; results must not depend on that state beyond
/// solver tolerances.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&mut self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), SystemError>;

    /// Row-major `dim x dim` Jacobian `d f_i / d y_j`.
    fn jacobian(&mut self, t: f64, y: &[f64], jac: &mut [f64]) -> Result<(), SystemError> {
        let _ = (t, y, jac);
        Err(SystemError("analytic Jacobian not available".into()))
    }
}

/// Full mass-action kinetics of a [`Mechanism`].
pub struct KineticSystem<'a>(pub &'a Mechanism);

impl OdeSystem for KineticSystem<'_> {
    fn dim(&self) -> usize {
        self.0.n_species()
    }

    fn rhs(&mut self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), SystemError> {
        self.0.rhs_into(y, dydt).map_err(|e| SystemError(e.to_string()))
    }

    fn jacobian(&mut self, _t: f64, y: &[f64], jac: &mut [f64]) -> Result<(), SystemError> {
        self.0.jacobian_into(y, jac).map_err(|e| SystemError(e.to_string()))
    }
}

/// Adapts closures to [`OdeSystem`].
pub struct FnSystem<F, J> {
    dim: usize,
    rhs: F,
    jac: Option<J>,
}

impl<F> FnSystem<F, fn(f64, &[f64], &mut [f64])>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, rhs: F) -> Self {
        Self { dim, rhs, jac: None }
    }
}

impl<F, J> FnSystem<F, J>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    J: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn with_jacobian(dim: usize, rhs: F, jac: J) -> Self {
        Self {
            dim,
            rhs,
            jac: Some(jac),
        }
    }
}

impl<F, J> OdeSystem for FnSystem<F, J>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    J: FnMut(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&mut self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), SystemError> {
        (self.rhs)(t, y, dydt);
        Ok(())
    }

    fn jacobian(&mut self, t: f64, y: &[f64], jac: &mut [f64]) -> Result<(), SystemError> {
        match self.jac.as_mut() {
            Some(j) => {
                j(t, y, jac);
                Ok(())
            }
            None => Err(SystemError("analytic Jacobian not available".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bdf,
    Dopri5,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bdf" => Ok(Method::Bdf),
            "dopri5" => Ok(Method::Dopri5),
            other => Err(format!("unknown method `{other}` (expected bdf or dopri5)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Bdf => "bdf",
            Method::Dopri5 => "dopri5",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tolerance {
    Scalar(f64),
    PerComponent(Vec<f64>),
}

impl Tolerance {
    fn expand(&self, n: usize) -> Result<Vec<f64>, IntegrateError> {
        let v = match self {
            Tolerance::Scalar(a) => vec![*a; n],
            Tolerance::PerComponent(v) if v.len() == n => v.clone(),
            Tolerance::PerComponent(v) => {
                return Err(IntegrateError::InvalidConfig(format!(
                    "atol has {} entries for a system of dimension {n}",
                    v.len()
                )))
            }
        };
        if v.iter().any(|&a| !(a > 0.0)) {
            return Err(IntegrateError::InvalidConfig("atol must be positive".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: Tolerance,
    /// Initial step; `None` selects one automatically.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: Tolerance::Scalar(1e-12),
            initial_step: None,
            max_steps: 2_000_000,
            method: Method::Bdf,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = Tolerance::Scalar(atol);
        self
    }

    fn validate(&self, n: usize) -> Result<Vec<f64>, IntegrateError> {
        if !(self.rtol > 0.0) {
            return Err(IntegrateError::InvalidConfig("rtol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::InvalidConfig("max_steps must be positive".into()));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(IntegrateError::InvalidConfig("initial step must be positive".into()));
            }
        }
        self.atol.expand(n)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub jacobian_evaluations: usize,
    pub newton_iterations: usize,
}

/// States sampled at requested output times.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// `times.len() x names.len()`.
    pub states: Array2<f64>,
    pub stats: StepStats,
}

impl SolutionTrajectory {
    pub fn n_components(&self) -> usize {
        self.states.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.column(j).to_vec()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.states.row(i).to_vec()
    }

    /// Per-component maximum over all rows.
    pub fn max_per_component(&self) -> Vec<f64> {
        (0..self.n_components())
            .map(|j| self.states.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// State at `t`, linearly interpolated between stored rows.
    ///
    /// Exact at stored output times; callers wanting high-order accuracy
    /// should request their evaluation times as solver outputs.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let i = self.times.partition_point(|&s| s < t);
        if i < n && self.times[i] == t {
            return Some(self.row(i));
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Some(
            (0..self.n_components())
                .map(|j| (1.0 - w) * self.states[[i - 1, j]] + w * self.states[[i, j]])
                .collect(),
        )
    }
}

/// `n` logarithmically spaced points in `[start, end]` (both > 0).
pub fn log_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let (a, b) = (start.log10(), end.log10());
            let mut grid: Vec<f64> = (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect();
            grid[0] = start;
            grid[n - 1] = end;
            grid
        }
    }
}

/// `n` evenly spaced points in `[start, end]`.
pub fn linear_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let mut grid: Vec<f64> = (0..n)
                .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
                .collect();
            grid[n - 1] = end;
            grid
        }
    }
}

/// Dispatches on [`SolverConfig::method`].
pub fn integrate(
    system: &mut dyn OdeSystem,
    y0: &[f64],
    t_span: (f64, f64),
    cfg: &SolverConfig,
    output_times: &[f64],
) -> Result<SolutionTrajectory, IntegrateError> {
    match cfg.method {
        Method::Bdf => integrate_bdf(system, y0, t_span, cfg, output_times),
        Method::Dopri5 => integrate_dopri5(system, y0, t_span, cfg, output_times),
    }
}

pub(crate) fn rms_norm(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

pub(crate) fn check_outputs(output_times: &[f64], t_span: (f64, f64)) -> Result<(), IntegrateError> {
    if !(t_span.0 < t_span.1) {
        return Err(IntegrateError::InvalidConfig("t_span must be increasing".into()));
    }
    for w in output_times.windows(2) {
        if !(w[0] < w[1]) {
            return Err(IntegrateError::InvalidConfig(
                "output times must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&t) = output_times.iter().find(|&&t| t < t_span.0 || t > t_span.1) {
        return Err(IntegrateError::OutputOutsideSpan(t));
    }
    Ok(())
}

/// Classical starting-step estimate from `|y0|`, `|f(y0)|` and one extra
/// right-hand-side evaluation.
pub(crate) fn initial_step(
    system: &mut dyn OdeSystem,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    interval: f64,
    order: usize,
    rtol: f64,
    atol: &[f64],
    stats: &mut StepStats,
) -> Result<f64, IntegrateError> {
    let n = y0.len();
    if n == 0 {
        return Ok(interval);
    }
    let scale: Vec<f64> = (0..n).map(|i| atol[i] + y0[i].abs() * rtol).collect();
    let d0 = rms_norm((0..n).map(|i| y0[i] / scale[i]), n);
    let d1 = rms_norm((0..n).map(|i| f0[i] / scale[i]), n);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(interval);
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    system
        .rhs(t0 + h0, &y1, &mut f1)
        .map_err(|source| IntegrateError::System { t: t0 + h0, source })?;
    stats.rhs_evaluations += 1;
    let d2 = rms_norm((0..n).map(|i| (f1[i] - f0[i]) / scale[i]), n) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order as f64 + 1.0))
    };
    Ok((100.0 * h0).min(h1).min(interval))
}
