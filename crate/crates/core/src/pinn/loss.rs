//! Collocation residual loss recorded on a tape.

use ndarray::{Array2, Array3};

use super::{OutputTransform, Pinn, PinnError, PinnSystem};
use crate::autodiff::{Tape, Var};

/// Result of recording a loss on a tape.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    /// `1 x 1` loss node.
    pub loss: Var,
    /// Per-species `sum_r res_ri^2` over the rows that entered the loss.
    pub sum_sq: Vec<f64>,
    /// Number of rows that entered the loss.
    pub count: usize,
    /// Batch positions excluded because the QSS closure failed there.
    pub excluded: Vec<usize>,
}

impl LossEvaluation {
    /// Unweighted per-species mean squared residual.
    pub fn per_species(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.sum_sq.iter().map(|s| s / c).collect()
    }
}

/// Records predicted concentrations `y` (`rows x species`) for times `t`.
fn record_prediction(tape: &mut Tape, pinn: &Pinn, params: &[Var], t: &[f64]) -> Result<Var, PinnError> {
    let n = t.len();
    let width = pinn.model.output_width();
    let tcol = Array2::from_shape_vec((n, 1), t.to_vec()).expect("n x 1");
    let unscaled = pinn.scale.iter().all(|&s| s == 1.0);
    let scale_block = || Array2::from_shape_fn((n, width), |(_, j)| pinn.scale[j]);
    match pinn.model.transform() {
        OutputTransform::HardIc => {
            if let Some(&bad) = t.iter().find(|&&v| !(v > 0.0)) {
                return Err(PinnError::InvalidTime(bad));
            }
            let x = tape.constant_with_tangent(tcol.mapv(f64::ln), tcol.mapv(|v| 1.0 / v));
            let mut out = pinn.model.record_with(tape, params, x);
            if !unscaled {
                let s = tape.constant(scale_block());
                out = tape.mul(out, s);
            }
            let tv = tape.constant_with_tangent(tcol, Array2::ones((n, 1)));
            let tn = tape.scale_rows(tv, out);
            let y0 = tape.constant(Array2::from_shape_vec((1, width), pinn.y0.clone()).expect("1 x width"));
            Ok(tape.add_row(tn, y0))
        }
        OutputTransform::None => {
            let x = tape.constant_with_tangent(tcol, Array2::ones((n, 1)));
            let mut out = pinn.model.record_with(tape, params, x);
            if !unscaled {
                let s = tape.constant(scale_block());
                out = tape.mul(out, s);
            }
            Ok(out)
        }
    }
}

/// Mean over batch rows of `sum_i w_i (dy_i/dt - f_i(y))^2`.
///
/// For a reduced system, `f` is the reduced right-hand side with the QSS
/// closure solved at each row (warm-started from `warm[row]` when given;
/// successful solutions are written back). Rows where the closure fails
/// are excluded from the mean and listed in the result.
pub fn residual_loss(
    tape: &mut Tape,
    pinn: &Pinn,
    system: &PinnSystem,
    t: &[f64],
    weights: &[f64],
    warm: Option<&mut [Option<Vec<f64>>]>,
) -> Result<LossEvaluation, PinnError> {
    let params = pinn.model.register(tape);
    residual_loss_with(tape, pinn, &params, system, t, weights, warm)
}

fn residual_loss_with(
    tape: &mut Tape,
    pinn: &Pinn,
    params: &[Var],
    system: &PinnSystem,
    t: &[f64],
    weights: &[f64],
    mut warm: Option<&mut [Option<Vec<f64>>]>,
) -> Result<LossEvaluation, PinnError> {
    let n = t.len();
    if n == 0 {
        return Err(PinnError::EmptyBatch);
    }
    let width = system.n_trained();
    if pinn.model.output_width() != width || weights.len() != width {
        return Err(PinnError::SpeciesMismatch(format!(
            "system trains {width} species; network has {} outputs and {} weights were given",
            pinn.model.output_width(),
            weights.len()
        )));
    }
    if let Some(w) = warm.as_deref() {
        assert_eq!(w.len(), n, "one warm-start slot per batch row");
    }
    let y = record_prediction(tape, pinn, params, t)?;
    let values = tape.value(y).clone();

    let mut f = Array2::zeros((n, width));
    let mut jac = Array3::zeros((n, width, width));
    let mut rows = vec![true; n];
    let mut excluded = Vec::new();
    let mut last_closure_error = None;
    for r in 0..n {
        let yr = values.row(r).to_vec();
        // Non-finite predictions or rates poison the loss rather than being
        // excluded, so divergence surfaces as a non-finite loss.
        let eval = if yr.iter().any(|v| !v.is_finite()) {
            None
        } else {
            match system {
                PinnSystem::Full(m) => m.rhs(&yr).and_then(|fr| Ok((fr, m.jacobian(&yr)?))).ok(),
                PinnSystem::Reduced(red) => {
                    let guess = warm.as_deref().and_then(|w| w[r].clone());
                    let q = red
                        .closure(t[r], &yr, guess.as_deref())
                        .or_else(|_| red.closure(t[r], &yr, None));
                    match q {
                        Err(e) => {
                            // Closure failure at a finite state: exclude the row.
                            last_closure_error = Some(e);
                            rows[r] = false;
                            excluded.push(r);
                            continue;
                        }
                        Ok(q) => {
                            let fr = red.reduced_rhs_with(&yr, &q).ok();
                            let jr = red.reduced_jacobian_with(&yr, &q).ok();
                            if let Some(w) = warm.as_deref_mut() {
                                w[r] = Some(q);
                            }
                            fr.zip(jr)
                        }
                    }
                }
            }
        };
        match eval {
            Some((fr, jr)) if fr.iter().all(|v| v.is_finite()) => {
                for i in 0..width {
                    f[[r, i]] = fr[i];
                    for k in 0..width {
                        jac[[r, i, k]] = jr[[i, k]];
                    }
                }
            }
            _ => f.row_mut(r).fill(f64::NAN),
        }
    }
    if excluded.len() == n {
        return Err(PinnError::Closure(last_closure_error.expect("every row failed the closure")));
    }

    let ydot = tape.tangent_of(y);
    let fnode = tape.row_jacobian(y, f, jac);
    let res = tape.sub(ydot, fnode);
    let loss = tape.weighted_square_mean(res, weights, &rows);

    let rv = tape.value(res);
    let mut sum_sq = vec![0.0; width];
    for (r, row) in rv.outer_iter().enumerate() {
        if rows[r] {
            for (s, v) in sum_sq.iter_mut().zip(row) {
                *s += v * v;
            }
        }
    }
    Ok(LossEvaluation {
        loss,
        sum_sq,
        count: n - excluded.len(),
        excluded,
    })
}

/// Residual loss plus, when the network does not embed the initial
/// condition, `sum_i w_ic_i (y_i(t0) - y0_i)^2` with unit weights.
pub fn training_loss(
    tape: &mut Tape,
    pinn: &Pinn,
    system: &PinnSystem,
    t: &[f64],
    weights: &[f64],
    warm: Option<&mut [Option<Vec<f64>>]>,
) -> Result<LossEvaluation, PinnError> {
    let params = pinn.model.register(tape);
    let mut eval = residual_loss_with(tape, pinn, &params, system, t, weights, warm)?;
    if pinn.model.transform() == OutputTransform::None {
        let t0 = system.mechanism().t_span().0;
        let y_at_t0 = record_prediction(tape, pinn, &params, &[t0])?;
        let width = pinn.y0.len();
        let target = tape.constant(Array2::from_shape_vec((1, width), pinn.y0.clone()).expect("1 x width"));
        let gap = tape.sub(y_at_t0, target);
        let ic = tape.weighted_square_mean(gap, &vec![1.0; width], &[true]);
        eval.loss = tape.add(eval.loss, ic);
    }
    Ok(eval)
}
