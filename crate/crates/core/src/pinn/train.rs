//! Mini-batch Adam training on the collocation residual.

use std::time::Instant;

use rand::seq::SliceRandom;

use super::{
    adam_step, rng_stream, sample_collocation, training_loss, AdamState, MlpModel, OutputTransform, Pinn, PinnError,
    PinnSystem, Sampling, STREAM_COLLOCATION, STREAM_SHUFFLE,
};
use crate::autodiff::{Tape, TapeError};

/// Everything that determines a training run besides the network shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub n_collocation: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub sampling: Sampling,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_updates: usize,
    /// Residual weight per trained species; `None` means all ones.
    pub species_weights: Option<Vec<f64>>,
    pub rng_seed: u64,
    pub output_transform: OutputTransform,
    /// Per-species output scale applied to the network; `None` means ones.
    pub y_ref_scale: Option<Vec<f64>>,
    /// A [`LossRecord`] is emitted every this many updates.
    pub record_every: usize,
    /// Stop when the mean batch loss over a window of this many updates
    /// fails to improve on the best earlier window by 1%. `None` disables
    /// early stopping.
    pub plateau_window: Option<usize>,
}

impl TrainingConfig {
    /// ROBER defaults: 2500 log-uniform points on `[1e-5, 1e5]`, batch
    /// 128, learning rate 1e-3, unit weights, hard initial conditions.
    pub fn rober() -> Self {
        Self {
            n_collocation: 2500,
            t_min: 1e-5,
            t_max: 1e5,
            sampling: Sampling::LogUniform,
            batch_size: 128,
            learning_rate: 1e-3,
            max_updates: 100_000,
            species_weights: None,
            rng_seed: 0,
            output_transform: OutputTransform::HardIc,
            y_ref_scale: None,
            record_every: 100,
            plateau_window: Some(10_000),
        }
    }

    /// POLLU defaults: 2500 uniform points on `[1e-3, 60]`. Callers should
    /// set `species_weights` to `1 / max_i^2` from a reference solution.
    pub fn pollu() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 60.0,
            sampling: Sampling::Uniform,
            ..Self::rober()
        }
    }

    pub fn validate(&self) -> Result<(), PinnError> {
        let bad = |m: String| Err(PinnError::InvalidConfig(m));
        if !(self.t_min > 0.0 && self.t_min <= self.t_max && self.t_max.is_finite()) {
            return bad(format!("need 0 < t_min <= t_max, got [{}, {}]", self.t_min, self.t_max));
        }
        if self.n_collocation == 0 || self.batch_size == 0 || self.batch_size > self.n_collocation {
            return bad(format!(
                "need 0 < batch_size <= n_collocation, got {} and {}",
                self.batch_size, self.n_collocation
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        if self.plateau_window == Some(0) {
            return bad("plateau window must be positive".into());
        }
        let positive = |v: &[f64]| v.iter().all(|w| w.is_finite() && *w > 0.0);
        if let Some(w) = &self.species_weights {
            if !positive(w) {
                return bad("species weights must be positive".into());
            }
        }
        if let Some(s) = &self.y_ref_scale {
            if !positive(s) {
                return bad("output scales must be positive".into());
            }
        }
        Ok(())
    }

    /// Residual weights for `n` trained species.
    pub fn weights_for(&self, n: usize) -> Result<Vec<f64>, PinnError> {
        match &self.species_weights {
            None => Ok(vec![1.0; n]),
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => Err(PinnError::SpeciesMismatch(format!("{} species weights for {n} trained species", w.len()))),
        }
    }

    /// A freshly initialised network for `system` with the given hidden
    /// widths, seeded and transformed per this configuration.
    pub fn build_pinn(&self, hidden: &[usize], system: &PinnSystem) -> Result<Pinn, PinnError> {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(system.n_trained());
        let model = MlpModel::new(&widths, self.rng_seed, self.output_transform)?;
        Pinn::new(model, system, self.y_ref_scale.clone())
    }
}

/// Mini-batch loss observed before the update numbered `step + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    /// `sum_i w_i * per_species_loss[i] + ic_loss`.
    pub total_loss: f64,
    /// Unweighted mean squared residual per trained species.
    pub per_species_loss: Vec<f64>,
    /// Initial-condition penalty; zero under the hard-IC transform.
    pub ic_loss: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<LossRecord>,
    /// Loss over the whole collocation set after the last update.
    pub final_loss: f64,
    pub final_per_species: Vec<f64>,
    pub updates: usize,
    pub stopped_early: bool,
    /// Collocation points excluded from the final loss (closure failures).
    pub excluded_points: usize,
    /// Mini-batch rows excluded during training, summed over updates.
    pub closure_failures: usize,
}

/// `sum_i (y_i(t0) - y0_i)^2`, only for networks without hard initial
/// conditions.
fn ic_penalty(pinn: &Pinn, system: &PinnSystem) -> Result<f64, PinnError> {
    if pinn.model.transform() == OutputTransform::HardIc {
        return Ok(0.0);
    }
    let y = pinn.predict(system.mechanism().t_span().0)?;
    Ok(y.iter().zip(&pinn.y0).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Loss over every collocation point, evaluated in chunks.
fn full_set_loss(
    pinn: &Pinn,
    system: &PinnSystem,
    points: &[f64],
    weights: &[f64],
    chunk: usize,
    warm: &mut [Option<Vec<f64>>],
) -> Result<(f64, Vec<f64>, usize), PinnError> {
    let mut sum_sq = vec![0.0; weights.len()];
    let (mut count, mut excluded) = (0usize, 0usize);
    for (ts, ws) in points.chunks(chunk).zip(warm.chunks_mut(chunk)) {
        let mut tape = Tape::new();
        let eval = super::residual_loss(&mut tape, pinn, system, ts, weights, Some(ws))?;
        for (s, v) in sum_sq.iter_mut().zip(&eval.sum_sq) {
            *s += v;
        }
        count += eval.count;
        excluded += eval.excluded.len();
    }
    let per: Vec<f64> = sum_sq.iter().map(|s| s / count.max(1) as f64).collect();
    let total = per.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>() + ic_penalty(pinn, system)?;
    Ok((total, per, excluded))
}

/// Trains `pinn` in place on the residual of `system`.
///
/// Collocation points are drawn once; each epoch visits them in a fresh
/// shuffled order in mini-batches (the last may be smaller). The whole run
/// is reproducible from `cfg.rng_seed` apart from the wall times.
pub fn train(
    pinn: &mut Pinn,
    system: &PinnSystem,
    cfg: &TrainingConfig,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<TrainOutcome, PinnError> {
    cfg.validate()?;
    let n_trained = system.n_trained();
    if pinn.species != system.trained_species() {
        return Err(PinnError::SpeciesMismatch(format!(
            "network predicts {:?} but the system trains {:?}",
            pinn.species,
            system.trained_species()
        )));
    }
    if pinn.model.transform() != cfg.output_transform {
        return Err(PinnError::InvalidConfig(format!(
            "network uses the {} transform but the configuration asks for {}",
            pinn.model.transform(),
            cfg.output_transform
        )));
    }
    let weights = cfg.weights_for(n_trained)?;
    let start = Instant::now();

    let points = sample_collocation(cfg, &mut rng_stream(cfg.rng_seed, STREAM_COLLOCATION));
    let mut shuffle_rng = rng_stream(cfg.rng_seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut cursor = order.len();
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; points.len()];
    let mut adam = AdamState::new(pinn.model.n_params());

    let mut history = Vec::new();
    let mut closure_failures = 0;
    let mut stopped_early = false;
    let (mut window_sum, mut window_len, mut best_window) = (0.0, 0usize, f64::INFINITY);
    let mut updates = 0;

    while updates < cfg.max_updates {
        if cursor >= order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + cfg.batch_size).min(order.len())];
        cursor += idx.len();
        let ts: Vec<f64> = idx.iter().map(|&i| points[i]).collect();
        let mut batch_warm: Vec<Option<Vec<f64>>> = idx.iter().map(|&i| warm[i].take()).collect();

        let mut tape = Tape::new();
        let eval = training_loss(&mut tape, pinn, system, &ts, &weights, Some(&mut batch_warm))?;
        for (&i, w) in idx.iter().zip(batch_warm) {
            warm[i] = w;
        }
        closure_failures += eval.excluded.len();
        let loss = tape.scalar(eval.loss);
        if !loss.is_finite() {
            let (t_lo, t_hi) = ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
            let param_max = pinn.model.params().iter().fold(0.0f64, |a, p| a.max(p.abs()));
            return Err(PinnError::NonFiniteLoss { step: updates, loss, t_lo, t_hi, param_max });
        }

        if updates % cfg.record_every == 0 {
            let per_species_loss = eval.per_species();
            let residual: f64 = per_species_loss.iter().zip(&weights).map(|(p, w)| p * w).sum();
            let ic_loss = match cfg.output_transform {
                OutputTransform::HardIc => 0.0,
                OutputTransform::None => (loss - residual).max(0.0),
            };
            let record = LossRecord {
                step: updates,
                total_loss: residual + ic_loss,
                ic_loss,
                per_species_loss,
                wall_time: start.elapsed().as_secs_f64(),
            };
            sink(&record);
            history.push(record);
        }

        let grads = tape.backward(eval.loss).map_err(|e| match e {
            TapeError::NonFiniteGradient(_) => PinnError::NonFiniteGradient,
            other => other.into(),
        })?;
        adam_step(pinn.model.params_mut(), &grads.flatten(), &mut adam, cfg.learning_rate)?;
        updates += 1;

        if let Some(window) = cfg.plateau_window {
            window_sum += loss;
            window_len += 1;
            if window_len == window {
                let mean = window_sum / window as f64;
                if best_window.is_finite() && mean > 0.99 * best_window {
                    stopped_early = true;
                    break;
                }
                best_window = best_window.min(mean);
                window_sum = 0.0;
                window_len = 0;
            }
        }
    }

    let (final_loss, final_per_species, excluded_points) =
        full_set_loss(pinn, system, &points, &weights, cfg.batch_size, &mut warm)?;
    Ok(TrainOutcome {
        history,
        final_loss,
        final_per_species,
        updates,
        stopped_early,
        excluded_points,
        closure_failures,
    })
}
