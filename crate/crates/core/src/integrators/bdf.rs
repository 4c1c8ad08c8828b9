//! Variable-order (1-5), variable-step backward differentiation formulas.
//!
//! The history is kept as a backward-difference array `D` in units of the
//! current step; a step-size change rescales `D` so that it represents the
//! same interpolating polynomial on the new grid. The corrector is a
//! simplified Newton iteration on `(I - c J) dy = c f - psi - d`, reusing
//! the Jacobian until convergence fails and refactoring `I - c J`
//! whenever the step or order changes.

use ndarray::Array2;

use super::{
    check_outputs, initial_step, rms_norm, IntegrateError, OdeSystem, SolutionTrajectory, SolverConfig,
    StepStats,
};
use crate::linalg::Lu;

const MAX_ORDER: usize = 5;
const NEWTON_MAXITER: usize = 4;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

struct Coefficients {
    gamma: [f64; MAX_ORDER + 1],
    alpha: [f64; MAX_ORDER + 1],
    error_const: [f64; MAX_ORDER + 2],
}

impl Coefficients {
    fn new() -> Self {
        let mut gamma = [0.0; MAX_ORDER + 1];
        for k in 1..=MAX_ORDER {
            gamma[k] = gamma[k - 1] + 1.0 / k as f64;
        }
        let mut error_const = [0.0; MAX_ORDER + 2];
        for (k, e) in error_const.iter_mut().enumerate() {
            *e = 1.0 / (k + 1) as f64;
        }
        Self {
            gamma,
            alpha: gamma,
            error_const,
        }
    }
}

/// `(order+1) x (order+1)` matrix mapping differences to a rescaled grid.
fn compute_r(order: usize, factor: f64) -> Vec<Vec<f64>> {
    let m = order + 1;
    let mut r = vec![vec![1.0; m]; m];
    for i in 1..m {
        for j in 1..m {
            let step = (i as f64 - 1.0 - factor * j as f64) / i as f64;
            r[i][j] = r[i - 1][j] * step;
        }
        r[i][0] = 0.0;
    }
    r
}

fn change_d(d: &mut [Vec<f64>], order: usize, factor: f64) {
    let r = compute_r(order, factor);
    let u = compute_r(order, 1.0);
    let m = order + 1;
    let mut ru = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            ru[i][j] = (0..m).map(|k| r[i][k] * u[k][j]).sum();
        }
    }
    let n = d[0].len();
    let old: Vec<Vec<f64>> = d[..m].to_vec();
    for j in 0..m {
        for c in 0..n {
            d[j][c] = (0..m).map(|i| ru[i][j] * old[i][c]).sum();
        }
    }
}

struct NewtonOutcome {
    converged: bool,
    iterations: usize,
    y: Vec<f64>,
    d: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn solve_bdf_system(
    system: &mut dyn OdeSystem,
    t_new: f64,
    y_predict: &[f64],
    c: f64,
    psi: &[f64],
    lu: &Lu,
    scale: &[f64],
    tol: f64,
    stats: &mut StepStats,
) -> Result<NewtonOutcome, IntegrateError> {
    let n = y_predict.len();
    let mut y = y_predict.to_vec();
    let mut d = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut dy_norm_old: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..NEWTON_MAXITER {
        iterations = k + 1;
        stats.rhs_evaluations += 1;
        stats.newton_iterations += 1;
        if system.rhs(t_new, &y, &mut f).is_err() || f.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut dy: Vec<f64> = (0..n).map(|i| c * f[i] - psi[i] - d[i]).collect();
        lu.solve_in_place(&mut dy);
        let dy_norm = rms_norm((0..n).map(|i| dy[i] / scale[i]), n);
        let rate = dy_norm_old.map(|old| dy_norm / old);
        if let Some(rate) = rate {
            if rate >= 1.0 || rate.powi((NEWTON_MAXITER - k) as i32) / (1.0 - rate) * dy_norm > tol {
                break;
            }
        }
        for i in 0..n {
            y[i] += dy[i];
            d[i] += dy[i];
        }
        if dy_norm == 0.0 || rate.is_some_and(|r| r / (1.0 - r) * dy_norm < tol) {
            converged = true;
            break;
        }
        dy_norm_old = Some(dy_norm);
    }
    Ok(NewtonOutcome {
        converged,
        iterations,
        y,
        d,
    })
}

fn factor_iteration_matrix(jac: &[f64], c: f64, n: usize) -> Result<Lu, IntegrateError> {
    let mut m: Vec<f64> = jac.iter().map(|&j| -c * j).collect();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    Ok(Lu::factor(n, &m)?)
}

fn eval_jacobian(
    system: &mut dyn OdeSystem,
    t: f64,
    y: &[f64],
    jac: &mut [f64],
    stats: &mut StepStats,
) -> Result<(), IntegrateError> {
    stats.jacobian_evaluations += 1;
    system
        .jacobian(t, y, jac)
        .map_err(|source| IntegrateError::System { t, source })
}

/// Integrates a stiff system with variable-order BDF, sampling the
/// interpolating polynomial at `output_times`.
pub fn integrate_bdf(
    system: &mut dyn OdeSystem,
    y0: &[f64],
    t_span: (f64, f64),
    cfg: &SolverConfig,
    output_times: &[f64],
) -> Result<SolutionTrajectory, IntegrateError> {
    let n = system.dim();
    if y0.len() != n {
        return Err(IntegrateError::InvalidConfig(format!(
            "initial state has {} components, system has {n}",
            y0.len()
        )));
    }
    let atol = cfg.validate(n)?;
    check_outputs(output_times, t_span)?;
    let rtol = cfg.rtol;
    let (t0, t_end) = t_span;
    let coeffs = Coefficients::new();
    let newton_tol = (10.0 * f64::EPSILON / rtol).max(0.03f64.min(rtol.sqrt()));

    let mut stats = StepStats::default();
    let mut out = Array2::zeros((output_times.len(), n));
    let mut next_out = 0;
    while next_out < output_times.len() && output_times[next_out] <= t0 {
        out.row_mut(next_out).assign(&ndarray::ArrayView1::from(y0));
        next_out += 1;
    }

    let mut f0 = vec![0.0; n];
    stats.rhs_evaluations += 1;
    system
        .rhs(t0, y0, &mut f0)
        .map_err(|source| IntegrateError::System { t: t0, source })?;
    let mut h_abs = match cfg.initial_step {
        Some(h) => h.min(t_end - t0),
        None => initial_step(system, t0, y0, &f0, t_end - t0, 1, rtol, &atol, &mut stats)?,
    };

    let mut jac = vec![0.0; n * n];
    eval_jacobian(system, t0, y0, &mut jac, &mut stats)?;
    let mut lu: Option<Lu> = None;

    let mut d = vec![vec![0.0; n]; MAX_ORDER + 3];
    d[0].copy_from_slice(y0);
    for i in 0..n {
        d[1][i] = f0[i] * h_abs;
    }
    let mut order = 1usize;
    let mut n_equal_steps = 0usize;
    let mut t = t0;

    while t < t_end {
        if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded(cfg.max_steps, t));
        }
        let min_step = 10.0 * (next_up(t) - t);
        if h_abs < min_step {
            change_d(&mut d, order, min_step / h_abs);
            h_abs = min_step;
            n_equal_steps = 0;
        }

        let mut current_jac = false;
        let (t_new, y_new, d_corr, error_norm, safety, scale) = loop {
            if h_abs < min_step {
                return Err(IntegrateError::StepUnderflow(t));
            }
            let mut t_new = t + h_abs;
            if t_new > t_end {
                t_new = t_end;
                change_d(&mut d, order, (t_new - t) / h_abs);
                n_equal_steps = 0;
                lu = None;
            }
            h_abs = t_new - t;

            let y_predict: Vec<f64> = (0..n).map(|i| (0..=order).map(|k| d[k][i]).sum()).collect();
            let scale: Vec<f64> = (0..n).map(|i| atol[i] + rtol * y_predict[i].abs()).collect();
            let psi: Vec<f64> = (0..n)
                .map(|i| (1..=order).map(|k| d[k][i] * coeffs.gamma[k]).sum::<f64>() / coeffs.alpha[order])
                .collect();
            let c = h_abs / coeffs.alpha[order];

            let outcome = loop {
                if lu.is_none() {
                    lu = Some(factor_iteration_matrix(&jac, c, n)?);
                }
                let outcome = solve_bdf_system(
                    system,
                    t_new,
                    &y_predict,
                    c,
                    &psi,
                    lu.as_ref().expect("factored above"),
                    &scale,
                    newton_tol,
                    &mut stats,
                )?;
                if outcome.converged || current_jac {
                    break outcome;
                }
                eval_jacobian(system, t_new, &y_predict, &mut jac, &mut stats)?;
                lu = None;
                current_jac = true;
            };

            if !outcome.converged {
                stats.rejected_steps += 1;
                h_abs *= 0.5;
                change_d(&mut d, order, 0.5);
                n_equal_steps = 0;
                lu = None;
                continue;
            }

            let safety = 0.9 * (2 * NEWTON_MAXITER + 1) as f64 / (2 * NEWTON_MAXITER + outcome.iterations) as f64;
            let scale: Vec<f64> = (0..n).map(|i| atol[i] + rtol * outcome.y[i].abs()).collect();
            let error_norm = rms_norm(
                (0..n).map(|i| coeffs.error_const[order] * outcome.d[i] / scale[i]),
                n,
            );
            if error_norm > 1.0 {
                stats.rejected_steps += 1;
                let factor = MIN_FACTOR.max(safety * error_norm.powf(-1.0 / (order as f64 + 1.0)));
                h_abs *= factor;
                change_d(&mut d, order, factor);
                n_equal_steps = 0;
                continue;
            }
            break (t_new, outcome.y, outcome.d, error_norm, safety, scale);
        };

        stats.accepted_steps += 1;
        n_equal_steps += 1;
        let t_old = t;
        t = t_new;

        // D^{j+1} y_n = D^j y_n - D^j y_{n-1}, with d = D^{k+1} y_n.
        for i in 0..n {
            d[order + 2][i] = d_corr[i] - d[order + 1][i];
            d[order + 1][i] = d_corr[i];
        }
        for k in (0..=order).rev() {
            for i in 0..n {
                d[k][i] += d[k + 1][i];
            }
        }

        if n_equal_steps >= order + 1 {
            let error_m_norm = if order > 1 {
                rms_norm(
                    (0..n).map(|i| coeffs.error_const[order - 1] * d[order][i] / scale[i]),
                    n,
                )
            } else {
                f64::INFINITY
            };
            let error_p_norm = if order < MAX_ORDER {
                rms_norm(
                    (0..n).map(|i| coeffs.error_const[order + 1] * d[order + 2][i] / scale[i]),
                    n,
                )
            } else {
                f64::INFINITY
            };
            let norms = [error_m_norm, error_norm, error_p_norm];
            let factors: Vec<f64> = norms
                .iter()
                .enumerate()
                .map(|(k, &e)| {
                    if e == 0.0 {
                        f64::INFINITY
                    } else {
                        e.powf(-1.0 / (order + k) as f64)
                    }
                })
                .collect();
            let (best, &max_factor) = factors
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, cur| if *cur.1 > *acc.1 { cur } else { acc });
            order = (order as isize + best as isize - 1) as usize;
            let factor = MAX_FACTOR.min(safety * max_factor);
            h_abs *= factor;
            change_d(&mut d, order, factor);
            n_equal_steps = 0;
            lu = None;
        }

        // Dense output from the current interpolating polynomial.
        while next_out < output_times.len() && output_times[next_out] <= t {
            let to = output_times[next_out];
            if to == t {
                out.row_mut(next_out).assign(&ndarray::ArrayView1::from(&y_new));
            } else {
                debug_assert!(to > t_old);
                let mut p = 1.0;
                let mut row = d[0].clone();
                for k in 0..order {
                    let shift = t - h_abs * k as f64;
                    p *= (to - shift) / (h_abs * (k + 1) as f64);
                    for i in 0..n {
                        row[i] += d[k + 1][i] * p;
                    }
                }
                out.row_mut(next_out).assign(&ndarray::ArrayView1::from(&row));
            }
            next_out += 1;
        }
    }

    Ok(SolutionTrajectory {
        names: (1..=n).map(|i| format!("y{i}")).collect(),
        times: output_times.to_vec(),
        states: out,
        stats,
    })
}

fn next_up(t: f64) -> f64 {
    if t.is_nan() || t == f64::INFINITY {
        return t;
    }
    if t == 0.0 {
        return f64::from_bits(1);
    }
    let bits = t.to_bits();
    if t > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// One implicit (backward) Euler step `y1 = y0 + h f(t + h, y1)` solved by
/// full Newton iteration.
pub fn backward_euler_step(
    system: &mut dyn OdeSystem,
    t: f64,
    y0: &[f64],
    h: f64,
) -> Result<Vec<f64>, IntegrateError> {
    let n = system.dim();
    let mut y = y0.to_vec();
    let mut f = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let t_new = t + h;
    for _ in 0..50 {
        system
            .rhs(t_new, &y, &mut f)
            .map_err(|source| IntegrateError::System { t: t_new, source })?;
        system
            .jacobian(t_new, &y, &mut jac)
            .map_err(|source| IntegrateError::System { t: t_new, source })?;
        let lu = factor_iteration_matrix(&jac, h, n)?;
        let mut delta: Vec<f64> = (0..n).map(|i| -(y[i] - y0[i] - h * f[i])).collect();
        lu.solve_in_place(&mut delta);
        let mut step = 0.0f64;
        for i in 0..n {
            y[i] += delta[i];
            step = step.max(delta[i].abs() / (1.0 + y[i].abs()));
        }
        if step <= 1e-15 {
            return Ok(y);
        }
    }
    Err(IntegrateError::NewtonFailure(t_new))
}
