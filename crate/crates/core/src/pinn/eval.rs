//! Accuracy against reference trajectories and QSS reconstruction.

use ndarray::Array2;

use super::{Pinn, PinnError};
use crate::integrators::{log_grid, SolutionTrajectory};
use crate::qssa::ReducedSystem;

/// Anything that maps times to named concentrations.
pub trait Predictor {
    fn species(&self) -> Vec<String>;
    /// One row per time, one column per entry of [`Self::species`].
    fn predict(&self, times: &[f64]) -> Result<Array2<f64>, PinnError>;
}

impl Predictor for Pinn {
    fn species(&self) -> Vec<String> {
        self.species.clone()
    }

    fn predict(&self, times: &[f64]) -> Result<Array2<f64>, PinnError> {
        self.predict_many(times)
    }
}

impl Predictor for SolutionTrajectory {
    fn species(&self) -> Vec<String> {
        self.names.clone()
    }

    fn predict(&self, times: &[f64]) -> Result<Array2<f64>, PinnError> {
        let mut out = Array2::zeros((times.len(), self.n_components()));
        for (i, &t) in times.iter().enumerate() {
            let row = self.interpolate(t).ok_or(PinnError::InvalidTime(t))?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
        }
        Ok(out)
    }
}

/// 1000 log-spaced evaluation times on `[t_min, t_max]`.
pub fn default_eval_grid(t_min: f64, t_max: f64) -> Vec<f64> {
    log_grid(t_min, t_max, 1000)
}

fn column_of(names: &[String], name: &str, what: &str) -> Result<usize, PinnError> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| PinnError::SpeciesMismatch(format!("species `{name}` is not in the {what}")))
}

/// Root-mean-square error per requested species over `eval_times`, with
/// species matched by name. Reference values between stored rows are
/// linearly interpolated, so references should be generated on the
/// evaluation grid.
pub fn evaluate_rmse<S: AsRef<str>>(
    predictor: &dyn Predictor,
    reference: &SolutionTrajectory,
    species: &[S],
    eval_times: &[f64],
) -> Result<Vec<f64>, PinnError> {
    if eval_times.is_empty() {
        return Err(PinnError::InvalidConfig("empty evaluation grid".into()));
    }
    let predicted_names = predictor.species();
    let cols: Vec<(usize, usize)> = species
        .iter()
        .map(|s| {
            let s = s.as_ref();
            Ok((column_of(&predicted_names, s, "prediction")?, column_of(&reference.names, s, "reference")?))
        })
        .collect::<Result<_, PinnError>>()?;
    let pred = predictor.predict(eval_times)?;
    let refv = reference.predict(eval_times)?;
    let n = eval_times.len() as f64;
    Ok(cols
        .iter()
        .map(|&(p, r)| {
            let ss: f64 = pred.column(p).iter().zip(refv.column(r)).map(|(a, b)| (a - b) * (a - b)).sum();
            (ss / n).sqrt()
        })
        .collect())
}

/// QSS concentrations recovered from predicted slow species.
#[derive(Debug, Clone, PartialEq)]
pub struct QssProfile {
    pub times: Vec<f64>,
    pub species: Vec<String>,
    /// `times x species`; NaN where the closure failed.
    pub values: Array2<f64>,
    /// Row indices where the closure failed.
    pub missing: Vec<usize>,
}

/// Solves the QSS closure at the network's predictions for each time,
/// warm-starting from the previous successful solve.
pub fn reconstruct_qss_profile(pinn: &Pinn, reduced: &ReducedSystem, times: &[f64]) -> Result<QssProfile, PinnError> {
    let base = reduced.base();
    let slow: Vec<String> = reduced.partition().non_qss_names(base).iter().map(|s| s.to_string()).collect();
    if pinn.species != slow {
        return Err(PinnError::SpeciesMismatch(format!(
            "network predicts {:?} but the reduced system's slow species are {slow:?}",
            pinn.species
        )));
    }
    let pred = pinn.predict_many(times)?;
    let species: Vec<String> = reduced.partition().qss_names(base).iter().map(|s| s.to_string()).collect();
    let mut values = Array2::from_elem((times.len(), species.len()), f64::NAN);
    let mut missing = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for (i, &t) in times.iter().enumerate() {
        let y = pred.row(i).to_vec();
        match reduced.closure(t, &y, warm.as_deref()) {
            Ok(q) => {
                for (j, v) in q.iter().enumerate() {
                    values[[i, j]] = *v;
                }
                warm = Some(q);
            }
            Err(_) => missing.push(i),
        }
    }
    Ok(QssProfile {
        times: times.to_vec(),
        species,
        values,
        missing,
    })
}
