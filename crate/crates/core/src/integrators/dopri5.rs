//! Dormand-Prince 5(4) with PI step-size control and fourth-order dense output.

use ndarray::Array2;

use super::{
    check_outputs, initial_step, rms_norm, IntegrateError, OdeSystem, SolutionTrajectory, SolverConfig,
    StepStats,
};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;

/// Integrates `system` from `t_span.0` to `t_span.1`, sampling the dense
/// output at `output_times` (which must be increasing and inside the span).
pub fn integrate_dopri5(
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
    let mut stats = StepStats::default();
    let mut out = Array2::zeros((output_times.len(), n));
    let mut next_out = 0;

    let eval = |system: &mut dyn OdeSystem, t: f64, y: &[f64], dy: &mut [f64], stats: &mut StepStats| {
        stats.rhs_evaluations += 1;
        system
            .rhs(t, y, dy)
            .map_err(|source| IntegrateError::System { t, source })
    };

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    eval(system, t, &y, &mut k1, &mut stats)?;

    while next_out < output_times.len() && output_times[next_out] <= t {
        out.row_mut(next_out).assign(&ndarray::ArrayView1::from(&y));
        next_out += 1;
    }

    let mut h = match cfg.initial_step {
        Some(h) => h,
        None => initial_step(system, t, &y, &k1, t_end - t0, 4, rtol, &atol, &mut stats)?,
    };
    let expo1 = 0.2 - BETA * 0.75;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut cont = vec![[0.0f64; 5]; n];

    while t < t_end {
        if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps {
            return Err(IntegrateError::MaxStepsExceeded(cfg.max_steps, t));
        }
        let min_step = 10.0 * f64::EPSILON * t.abs().max(t_end.abs().max(1e-300) * 1e-10);
        if h < min_step {
            return Err(IntegrateError::StepUnderflow(t));
        }
        let mut last = false;
        if t + h >= t_end {
            h = t_end - t;
            last = true;
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        eval(system, t + C2 * h, &ytmp, &mut k2, &mut stats)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        eval(system, t + C3 * h, &ytmp, &mut k3, &mut stats)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        eval(system, t + C4 * h, &ytmp, &mut k4, &mut stats)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        eval(system, t + C5 * h, &ytmp, &mut k5, &mut stats)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t_end } else { t + h };
        eval(system, t_new, &ytmp, &mut k6, &mut stats)?;
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        eval(system, t_new, &ynew, &mut k7, &mut stats)?;

        let err = rms_norm(
            (0..n).map(|i| {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                e / (atol[i] + rtol * y[i].abs().max(ynew[i].abs()))
            }),
            n,
        );
        if !err.is_finite() {
            stats.rejected_steps += 1;
            h *= MIN_SCALE;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / MAX_SCALE, 1.0 / MIN_SCALE);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            stats.accepted_steps += 1;

            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                cont[i] = [
                    y[i],
                    ydiff,
                    bspl,
                    ydiff - h * k7[i] - bspl,
                    h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]),
                ];
            }
            while next_out < output_times.len() && output_times[next_out] <= t_new {
                let to = output_times[next_out];
                if to == t_new {
                    out.row_mut(next_out).assign(&ndarray::ArrayView1::from(&ynew));
                } else {
                    let theta = (to - t) / h;
                    let theta1 = 1.0 - theta;
                    for i in 0..n {
                        let c = &cont[i];
                        out[[next_out, i]] =
                            c[0] + theta * (c[1] + theta1 * (c[2] + theta * (c[3] + theta1 * c[4])));
                    }
                }
                next_out += 1;
            }

            std::mem::swap(&mut k1, &mut k7);
            std::mem::swap(&mut y, &mut ynew);
            t = t_new;
            h = h_new;
            last_rejected = false;
        } else {
            stats.rejected_steps += 1;
            h /= (fac11 / SAFETY).min(1.0 / MIN_SCALE);
            last_rejected = true;
        }
    }

    Ok(SolutionTrajectory {
        names: (1..=n).map(|i| format!("y{i}")).collect(),
        times: output_times.to_vec(),
        states: out,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{FnSystem, Method};

    fn cfg(rtol: f64, atol: f64) -> SolverConfig {
        SolverConfig::with_method(Method::Dopri5).tolerances(rtol, atol)
    }

    #[test]
    fn exponential_decay() {
        let mut sys = FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0]);
        let sol = integrate_dopri5(&mut sys, &[1.0], (0.0, 1.0), &cfg(1e-10, 1e-10), &[0.0, 1.0]).unwrap();
        assert!((sol.states[[1, 0]] - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(sol.states[[0, 0]], 1.0);
    }

    #[test]
    fn constant_system_never_rejects() {
        let mut sys = FnSystem::new(2, |_t, _y: &[f64], dy: &mut [f64]| dy.fill(0.0));
        let times = [0.0, 0.5, 2.0];
        let sol = integrate_dopri5(&mut sys, &[3.0, -1.0], (0.0, 2.0), &cfg(1e-8, 1e-10), &times).unwrap();
        assert_eq!(sol.stats.rejected_steps, 0);
        for r in 0..3 {
            assert_eq!(sol.row(r), vec![3.0, -1.0]);
        }
    }

    #[test]
    fn dense_output_matches_direct_stop() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let rtol = 1e-7;
        let c = cfg(rtol, 1e-10);
        let mut sys = FnSystem::new(2, f);
        let dense = integrate_dopri5(&mut sys, &[1.0, 0.0], (0.0, 10.0), &c, &[0.0, 3.3, 7.77]).unwrap();
        for (row, &stop) in [3.3, 7.77].iter().enumerate() {
            let mut sys = FnSystem::new(2, f);
            let direct = integrate_dopri5(&mut sys, &[1.0, 0.0], (0.0, stop), &c, &[stop]).unwrap();
            for j in 0..2 {
                assert!((dense.states[[row + 1, j]] - direct.states[[0, j]]).abs() <= 10.0 * rtol);
            }
        }
    }

    #[test]
    fn tighter_tolerance_does_not_increase_error() {
        let exact = (-2.0f64).exp() * 2.0f64.cos();
        let mut prev = f64::INFINITY;
        for rtol in [1e-4, 5e-5, 2.5e-5, 1.25e-5, 1e-6, 5e-7] {
            let mut sys = FnSystem::new(2, |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = -y[0] - y[1];
                dy[1] = y[0] - y[1];
            });
            let sol = integrate_dopri5(&mut sys, &[1.0, 0.0], (0.0, 2.0), &cfg(rtol, rtol * 1e-3), &[2.0]).unwrap();
            let err = (sol.states[[0, 0]] - exact).abs();
            assert!(err <= prev * 1.05, "rtol {rtol}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn max_steps_is_reported() {
        let mut sys = FnSystem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -1e6 * (y[0] - 1.0));
        let mut c = cfg(1e-8, 1e-10);
        c.max_steps = 50;
        let err = integrate_dopri5(&mut sys, &[0.0], (0.0, 10.0), &c, &[10.0]).unwrap_err();
        assert!(matches!(err, IntegrateError::MaxStepsExceeded(50, _)));
    }

    #[test]
    fn rejects_outputs_outside_span() {
        let mut sys = FnSystem::new(1, |_t, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0);
        let err = integrate_dopri5(&mut sys, &[0.0], (0.0, 1.0), &cfg(1e-6, 1e-9), &[2.0]).unwrap_err();
        assert_eq!(err, IntegrateError::OutputOutsideSpan(2.0));
    }
}
