//! Quasi-steady-state reduction.
//!
//! A [`QssPartition`] splits species into fast (QSS) and slow (non-QSS)
//! sets. A [`ReducedSystem`] keeps ODEs for the slow species only; the QSS
//! concentrations follow from the algebraic constraint that their net
//! production rate vanishes, solved either in closed form (Robertson) or by
//! damped Newton iteration. Closure sensitivities come from the
//! implicit-function theorem rather than from differentiating iterations.
//!
//! Closure inputs always pass through `|.|`: the constraint is only
//! physically meaningful for non-negative concentrations, and network
//! outputs may dip slightly below zero.

use ndarray::Array2;
use thiserror::Error;

use crate::integrators::{
    integrate, IntegrateError, KineticSystem, OdeSystem, SolutionTrajectory, SolverConfig, SystemError,
};
use crate::linalg::Lu;
use crate::mechanism::{parse_mechanism, Mechanism, MechanismError};

/// Residual tolerance (max-norm of the QSS net production rates).
pub const CLOSURE_TOLERANCE: f64 = 1e-12;
/// Newton iteration budget per closure solve.
pub const CLOSURE_MAX_ITER: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QssaError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("every species would be QSS; at least one slow species is required")]
    NoSlowSpecies,
    #[error("a reduced system needs at least one QSS species")]
    NoQssSpecies,
    #[error("threshold must be a non-negative finite number, got {0}")]
    InvalidThreshold(f64),
    #[error("reference trajectory mismatch: {0}")]
    ReferenceMismatch(String),
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("closed-form closure requires the Robertson mechanism with QSS species B: {0}")]
    ClosedFormUnavailable(String),
    #[error("closure inputs must be finite")]
    NonFiniteInput,
    #[error("QSS closure did not converge (residual {:e} after {} iterations)", .0.final_residual_norm, .0.iterations)]
    NotConverged(ClosureSolveReport),
    #[error("QSS sub-Jacobian is singular; the quasi-steady state is ill-posed here")]
    SingularClosure,
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Ordered, disjoint split of species indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QssPartition {
    qss: Vec<usize>,
    non_qss: Vec<usize>,
}

impl QssPartition {
    /// Builds the partition of `n_species` species whose QSS set is `qss`.
    pub fn new(n_species: usize, qss: impl IntoIterator<Item = usize>) -> Result<Self, QssaError> {
        let mut is_qss = vec![false; n_species];
        for i in qss {
            if i >= n_species {
                return Err(QssaError::InvalidPartition(format!(
                    "species index {i} out of range for {n_species} species"
                )));
            }
            if is_qss[i] {
                return Err(QssaError::InvalidPartition(format!("species index {i} listed twice")));
            }
            is_qss[i] = true;
        }
        let (q, nq): (Vec<usize>, Vec<usize>) = (0..n_species).partition(|&i| is_qss[i]);
        Ok(Self { qss: q, non_qss: nq })
    }

    pub fn from_names<S: AsRef<str>>(m: &Mechanism, names: &[S]) -> Result<Self, QssaError> {
        let idx = names
            .iter()
            .map(|n| {
                m.species_index(n.as_ref())
                    .ok_or_else(|| QssaError::InvalidPartition(format!("unknown species {}", n.as_ref())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(m.n_species(), idx)
    }

    pub fn qss_indices(&self) -> &[usize] {
        &self.qss
    }

    pub fn non_qss_indices(&self) -> &[usize] {
        &self.non_qss
    }

    pub fn n_species(&self) -> usize {
        self.qss.len() + self.non_qss.len()
    }

    pub fn qss_names<'m>(&self, m: &'m Mechanism) -> Vec<&'m str> {
        self.qss.iter().map(|&i| m.species()[i].as_str()).collect()
    }

    pub fn non_qss_names<'m>(&self, m: &'m Mechanism) -> Vec<&'m str> {
        self.non_qss.iter().map(|&i| m.species()[i].as_str()).collect()
    }

    /// The `QSS: <name> ...` serialization line (no trailing newline).
    pub fn to_line(&self, m: &Mechanism) -> String {
        let mut line = String::from("QSS:");
        for name in self.qss_names(m) {
            line.push(' ');
            line.push_str(name);
        }
        line
    }

    /// Splits `full = q ∪ nq` values into the non-QSS subset.
    pub fn gather_non_qss(&self, full: &[f64]) -> Vec<f64> {
        self.non_qss.iter().map(|&i| full[i]).collect()
    }

    pub fn gather_qss(&self, full: &[f64]) -> Vec<f64> {
        self.qss.iter().map(|&i| full[i]).collect()
    }

    /// Inverse of the two gathers.
    pub fn scatter(&self, non_qss: &[f64], qss: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_species()];
        for (&i, &v) in self.non_qss.iter().zip(non_qss) {
            full[i] = v;
        }
        for (&i, &v) in self.qss.iter().zip(qss) {
            full[i] = v;
        }
        full
    }
}

/// Parses a mechanism file that may carry a trailing `QSS:` line.
pub fn parse_mechanism_with_partition(
    source: &str,
) -> Result<(Mechanism, Option<QssPartition>), QssaError> {
    let mut names: Option<Vec<String>> = None;
    let mut rest = String::with_capacity(source.len());
    for line in source.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        if let Some(list) = body.strip_prefix("QSS:") {
            if names.is_some() {
                return Err(QssaError::InvalidPartition("QSS line given twice".into()));
            }
            names = Some(list.split_whitespace().map(str::to_string).collect());
            // Keep line numbering stable for mechanism syntax errors.
            rest.push('\n');
        } else {
            rest.push_str(line);
            rest.push('\n');
        }
    }
    let m = parse_mechanism(&rest)?;
    let partition = names.map(|n| QssPartition::from_names(&m, &n)).transpose()?;
    Ok((m, partition))
}

/// Mechanism text followed by the partition's `QSS:` line.
pub fn serialize_with_partition(m: &Mechanism, p: &QssPartition) -> String {
    let mut text = m.to_text();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&p.to_line(m));
    text.push('\n');
    text
}

/// Species whose maximum concentration along `reference` is strictly
/// below `threshold` become QSS.
pub fn select_qss_species(
    m: &Mechanism,
    reference: &SolutionTrajectory,
    threshold: f64,
) -> Result<QssPartition, QssaError> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(QssaError::InvalidThreshold(threshold));
    }
    if reference.n_components() != m.n_species() {
        return Err(QssaError::ReferenceMismatch(format!(
            "trajectory has {} components, mechanism has {} species",
            reference.n_components(),
            m.n_species()
        )));
    }
    let (t0, t1) = m.t_span();
    match (reference.times.first(), reference.times.last()) {
        (Some(&a), Some(&b)) if a <= t0 + 1e-6 * (t1 - t0) && b >= t1 - 1e-9 * (t1 - t0) => {}
        _ => {
            return Err(QssaError::ReferenceMismatch(format!(
                "trajectory does not cover the mechanism span [{t0}, {t1}]"
            )))
        }
    }
    let maxima = reference.max_per_component();
    let qss: Vec<usize> = (0..m.n_species()).filter(|&i| maxima[i] < threshold).collect();
    if qss.len() == m.n_species() {
        return Err(QssaError::NoSlowSpecies);
    }
    QssPartition::new(m.n_species(), qss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureMode {
    /// Analytic root of the Robertson quadratic for species B.
    ClosedFormRober,
    /// Damped Newton on the QSS net production rates.
    Newton,
}

impl std::str::FromStr for ClosureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "closed-form-rober" | "closed-form" => Ok(Self::ClosedFormRober),
            "newton" => Ok(Self::Newton),
            other => Err(format!("unknown closure mode `{other}` (expected newton or closed-form-rober)")),
        }
    }
}

impl std::fmt::Display for ClosureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ClosedFormRober => "closed-form-rober",
            Self::Newton => "newton",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureSolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RoberRates {
    k1: f64,
    k2: f64,
    k3: f64,
}

/// Slow-species ODEs coupled to an algebraic QSS closure.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    base: Mechanism,
    partition: QssPartition,
    mode: ClosureMode,
    rober: Option<RoberRates>,
    initial_guess: f64,
}

impl ReducedSystem {
    pub fn new(base: Mechanism, partition: QssPartition, mode: ClosureMode) -> Result<Self, QssaError> {
        if partition.n_species() != base.n_species() {
            return Err(QssaError::DimensionMismatch {
                expected: base.n_species(),
                found: partition.n_species(),
            });
        }
        if partition.qss.is_empty() {
            return Err(QssaError::NoQssSpecies);
        }
        if partition.non_qss.is_empty() {
            return Err(QssaError::NoSlowSpecies);
        }
        let rober = match mode {
            ClosureMode::ClosedFormRober => Some(rober_rates(&base, &partition)?),
            ClosureMode::Newton => None,
        };
        Ok(Self {
            base,
            partition,
            mode,
            rober,
            initial_guess: 1e-5,
        })
    }

    /// Newton starting value used when no warm start is supplied; the
    /// default corresponds to a selection threshold of `1e-4`.
    pub fn with_selection_threshold(mut self, threshold: f64) -> Self {
        self.initial_guess = threshold / 10.0;
        self
    }

    pub fn base(&self) -> &Mechanism {
        &self.base
    }

    pub fn partition(&self) -> &QssPartition {
        &self.partition
    }

    pub fn mode(&self) -> ClosureMode {
        self.mode
    }

    pub fn n_qss(&self) -> usize {
        self.partition.qss.len()
    }

    pub fn n_non_qss(&self) -> usize {
        self.partition.non_qss.len()
    }

    /// Slow-species initial conditions.
    pub fn initial_non_qss(&self) -> Vec<f64> {
        self.partition.gather_non_qss(self.base.initial_concentrations())
    }

    fn check_input(&self, y_non_qss: &[f64]) -> Result<(), QssaError> {
        if y_non_qss.len() != self.n_non_qss() {
            return Err(QssaError::DimensionMismatch {
                expected: self.n_non_qss(),
                found: y_non_qss.len(),
            });
        }
        if y_non_qss.iter().any(|v| !v.is_finite()) {
            return Err(QssaError::NonFiniteInput);
        }
        Ok(())
    }

    /// QSS concentrations at the given slow-species state. `warm_start`
    /// (a previous solution) seeds the Newton iteration.
    pub fn solve_qss_closure(
        &self,
        _t: f64,
        y_non_qss: &[f64],
        warm_start: Option<&[f64]>,
    ) -> Result<(Vec<f64>, ClosureSolveReport), QssaError> {
        self.check_input(y_non_qss)?;
        let guarded: Vec<f64> = y_non_qss.iter().map(|v| v.abs()).collect();
        if let Some(r) = self.rober {
            let (a1, a3) = (guarded[0], guarded[1]);
            // Rationalised root of k2 y2^2 + k3 a3 y2 - k1 a1 = 0; avoids the
            // cancellation in (-k3 a3 + sqrt(D)) / (2 k2) when k3 a3 dominates.
            let root = (r.k3 * r.k3 * a3 * a3 + 4.0 * r.k1 * r.k2 * a1).sqrt();
            let denom = r.k3 * a3 + root;
            let y2 = if denom > 0.0 { 2.0 * r.k1 * a1 / denom } else { 0.0 };
            let full = self.partition.scatter(&guarded, &[y2]);
            let residual = self.base.rhs(&full)?[self.partition.qss[0]].abs();
            return Ok((
                vec![y2],
                ClosureSolveReport {
                    iterations: 0,
                    final_residual_norm: residual,
                    converged: residual <= CLOSURE_TOLERANCE,
                },
            ));
        }
        Ok(self.newton(&guarded, warm_start))
    }

    fn newton(&self, guarded: &[f64], warm_start: Option<&[f64]>) -> (Vec<f64>, ClosureSolveReport) {
        let n = self.base.n_species();
        let q = &self.partition.qss;
        let nq = q.len();
        let mut x: Vec<f64> = match warm_start {
            Some(w) if w.len() == nq && w.iter().all(|v| v.is_finite() && *v >= 0.0) => w.to_vec(),
            _ => vec![self.initial_guess; nq],
        };
        let mut full = self.partition.scatter(guarded, &x);
        let mut f = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        let residual = |full: &[f64], f: &mut [f64]| -> f64 {
            self.base.rhs_into(full, f).expect("dimension checked");
            q.iter().map(|&i| f[i].abs()).fold(0.0, f64::max)
        };
        let mut g_norm = residual(&full, &mut f);
        let mut iterations = 0;
        while iterations < CLOSURE_MAX_ITER && g_norm > 1e-3 * CLOSURE_TOLERANCE {
            iterations += 1;
            self.base.jacobian_into(&full, &mut jac).expect("dimension checked");
            let mut jqq = vec![0.0; nq * nq];
            for (a, &i) in q.iter().enumerate() {
                for (b, &j) in q.iter().enumerate() {
                    jqq[a * nq + b] = jac[i * n + j];
                }
            }
            let Ok(lu) = Lu::factor(nq, &jqq) else { break };
            let mut dx: Vec<f64> = q.iter().map(|&i| -f[i]).collect();
            lu.solve_in_place(&mut dx);
            if dx.iter().any(|v| !v.is_finite()) {
                break;
            }
            // Backtracking on the residual norm; iterates are clamped at zero.
            let mut lambda = 1.0;
            let (x_new, g_new) = loop {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| (xi + lambda * di).max(0.0)).collect();
                for (&i, &v) in q.iter().zip(&trial) {
                    full[i] = v;
                }
                let g = residual(&full, &mut f);
                if g < (1.0 - 1e-4 * lambda) * g_norm || lambda < 1e-6 {
                    break (trial, g);
                }
                lambda *= 0.5;
            };
            let step = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            x = x_new;
            g_norm = g_new;
            if g_norm <= CLOSURE_TOLERANCE && step <= 1e-10 {
                break;
            }
        }
        let report = ClosureSolveReport {
            iterations,
            final_residual_norm: g_norm,
            converged: g_norm <= CLOSURE_TOLERANCE,
        };
        (x, report)
    }

    /// Like [`Self::solve_qss_closure`], but non-convergence is an error.
    pub fn closure(&self, t: f64, y_non_qss: &[f64], warm_start: Option<&[f64]>) -> Result<Vec<f64>, QssaError> {
        let (y, report) = self.solve_qss_closure(t, y_non_qss, warm_start)?;
        if report.converged {
            Ok(y)
        } else {
            Err(QssaError::NotConverged(report))
        }
    }

    /// Sensitivity matrix `d y_qss / d y_non_qss` (row-major, `n_qss x
    /// n_non_qss`) at a converged closure point, including the sign factor
    /// of the absolute-value guard.
    pub fn closure_jacobian(&self, y_non_qss: &[f64], y_qss: &[f64]) -> Result<Array2<f64>, QssaError> {
        self.check_input(y_non_qss)?;
        let (nq, ns) = (self.n_qss(), self.n_non_qss());
        if y_qss.len() != nq {
            return Err(QssaError::DimensionMismatch {
                expected: nq,
                found: y_qss.len(),
            });
        }
        let sign: Vec<f64> = y_non_qss.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let guarded: Vec<f64> = y_non_qss.iter().map(|v| v.abs()).collect();
        let mut dc = Array2::zeros((nq, ns));
        if let Some(r) = self.rober {
            let (a1, a3) = (guarded[0], guarded[1]);
            let root = (r.k3 * r.k3 * a3 * a3 + 4.0 * r.k1 * r.k2 * a1).sqrt();
            if root == 0.0 {
                return Err(QssaError::SingularClosure);
            }
            dc[[0, 0]] = r.k1 / root * sign[0];
            dc[[0, 1]] = (-r.k3 + r.k3 * r.k3 * a3 / root) / (2.0 * r.k2) * sign[1];
            return Ok(dc);
        }
        let n = self.base.n_species();
        let full = self.partition.scatter(&guarded, y_qss);
        let mut jac = vec![0.0; n * n];
        self.base.jacobian_into(&full, &mut jac)?;
        let (q, s) = (&self.partition.qss, &self.partition.non_qss);
        let mut jqq = vec![0.0; nq * nq];
        for (a, &i) in q.iter().enumerate() {
            for (b, &j) in q.iter().enumerate() {
                jqq[a * nq + b] = jac[i * n + j];
            }
        }
        let lu = Lu::factor(nq, &jqq).map_err(|_| QssaError::SingularClosure)?;
        let mut col = vec![0.0; nq];
        for (b, &j) in s.iter().enumerate() {
            for (a, &i) in q.iter().enumerate() {
                col[a] = -jac[i * n + j] * sign[b];
            }
            lu.solve_in_place(&mut col);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(QssaError::SingularClosure);
            }
            for a in 0..nq {
                dc[[a, b]] = col[a];
            }
        }
        Ok(dc)
    }

    /// Directional derivative of the closure along `direction`.
    pub fn closure_tangent(
        &self,
        _t: f64,
        y_non_qss: &[f64],
        y_qss: &[f64],
        direction: &[f64],
    ) -> Result<Vec<f64>, QssaError> {
        if direction.len() != self.n_non_qss() {
            return Err(QssaError::DimensionMismatch {
                expected: self.n_non_qss(),
                found: direction.len(),
            });
        }
        let dc = self.closure_jacobian(y_non_qss, y_qss)?;
        Ok(dc.dot(&ndarray::ArrayView1::from(direction)).to_vec())
    }

    /// Full state with the closure inserted at the QSS indices. Slow
    /// species keep their signed values; only the closure sees `|.|`.
    pub fn assemble(&self, y_non_qss: &[f64], y_qss: &[f64]) -> Vec<f64> {
        self.partition.scatter(y_non_qss, y_qss)
    }

    /// Slow-species derivatives given an already solved closure.
    pub fn reduced_rhs_with(&self, y_non_qss: &[f64], y_qss: &[f64]) -> Result<Vec<f64>, QssaError> {
        let full = self.assemble(y_non_qss, y_qss);
        let f = self.base.rhs(&full)?;
        Ok(self.partition.gather_non_qss(&f))
    }

    /// Slow-species derivatives; closure non-convergence is an error.
    pub fn reduced_rhs(&self, t: f64, y_non_qss: &[f64]) -> Result<Vec<f64>, QssaError> {
        let y_qss = self.closure(t, y_non_qss, None)?;
        self.reduced_rhs_with(y_non_qss, &y_qss)
    }

    /// Reduced Jacobian `J_ss + J_sq * dC` at a solved closure point.
    pub fn reduced_jacobian_with(&self, y_non_qss: &[f64], y_qss: &[f64]) -> Result<Array2<f64>, QssaError> {
        let n = self.base.n_species();
        let full = self.assemble(y_non_qss, y_qss);
        let mut jac = vec![0.0; n * n];
        self.base.jacobian_into(&full, &mut jac)?;
        let dc = self.closure_jacobian(y_non_qss, y_qss)?;
        let (q, s) = (&self.partition.qss, &self.partition.non_qss);
        let mut out = Array2::zeros((s.len(), s.len()));
        for (a, &i) in s.iter().enumerate() {
            for (b, &j) in s.iter().enumerate() {
                let coupled: f64 = q.iter().enumerate().map(|(c, &k)| jac[i * n + k] * dc[[c, b]]).sum();
                out[[a, b]] = jac[i * n + j] + coupled;
            }
        }
        Ok(out)
    }

    /// Integrates the slow species from the mechanism's initial state.
    /// Trajectory columns are the non-QSS species in partition order.
    pub fn integrate(&self, cfg: &SolverConfig, output_times: &[f64]) -> Result<SolutionTrajectory, QssaError> {
        let (t0, t1) = self.base.t_span();
        self.integrate_from(t0, &self.initial_non_qss(), t1, cfg, output_times)
    }

    /// Integrates the slow species from `y_non_qss` at `t_start` to `t_end`.
    pub fn integrate_from(
        &self,
        t_start: f64,
        y_non_qss: &[f64],
        t_end: f64,
        cfg: &SolverConfig,
        output_times: &[f64],
    ) -> Result<SolutionTrajectory, QssaError> {
        self.check_input(y_non_qss)?;
        let mut ode = ReducedOde::new(self);
        let mut traj = integrate(&mut ode, y_non_qss, (t_start, t_end), cfg, output_times)?;
        traj.names = self.partition.non_qss_names(&self.base).into_iter().map(str::to_string).collect();
        Ok(traj)
    }

    /// True when the closure converges at the mechanism's initial state.
    /// It can fail there even for a sound partition: POLLU starts without
    /// NO2, so the radical pool has no sink and the QSS Jacobian is singular.
    pub fn closure_solvable_at_start(&self) -> bool {
        let t0 = self.base.t_span().0;
        self.closure(t0, &self.initial_non_qss(), None).is_ok()
    }

    /// Slow-species state at `t_start`, taken from a full-system run from
    /// the mechanism's initial state. Starts the reduced system past an
    /// initial layer in which the closure has no solution.
    pub fn full_state_at(&self, t_start: f64, cfg: &SolverConfig) -> Result<Vec<f64>, QssaError> {
        let t0 = self.base.t_span().0;
        if t_start <= t0 {
            return Ok(self.initial_non_qss());
        }
        let mut sys = KineticSystem(&self.base);
        let traj = integrate(&mut sys, self.base.initial_concentrations(), (t0, t_start), cfg, &[t_start])?;
        Ok(self.partition.gather_non_qss(&traj.row(0)))
    }

    /// Full-species trajectory from a slow-species one by re-solving the
    /// closure at every row. Rows where the closure fails are NaN in the
    /// QSS columns and their indices are returned.
    pub fn reconstruct_full(&self, slow: &SolutionTrajectory) -> (SolutionTrajectory, Vec<usize>) {
        let n = self.base.n_species();
        let mut states = Array2::zeros((slow.times.len(), n));
        let mut failures = Vec::new();
        let mut warm: Option<Vec<f64>> = None;
        for (r, &t) in slow.times.iter().enumerate() {
            let y = slow.row(r);
            let q = match self.closure(t, &y, warm.as_deref()) {
                Ok(q) => {
                    warm = Some(q.clone());
                    q
                }
                Err(_) => {
                    failures.push(r);
                    vec![f64::NAN; self.n_qss()]
                }
            };
            for (j, v) in self.assemble(&y, &q).into_iter().enumerate() {
                states[[r, j]] = v;
            }
        }
        let traj = SolutionTrajectory {
            names: self.base.species().to_vec(),
            times: slow.times.clone(),
            states,
            stats: slow.stats,
        };
        (traj, failures)
    }
}

fn rober_rates(m: &Mechanism, p: &QssPartition) -> Result<RoberRates, QssaError> {
    let unavailable = |why: &str| Err(QssaError::ClosedFormUnavailable(why.to_string()));
    if m.n_species() != 3 || m.reactions().len() != 3 {
        return unavailable("expected 3 species and 3 reactions");
    }
    if p.qss != [1] {
        return unavailable("the QSS set must be exactly the second species");
    }
    let shape: Vec<(Vec<(usize, u32)>, Vec<(usize, u32)>)> = m
        .reactions()
        .iter()
        .map(|r| {
            let mut a = r.reactants().to_vec();
            let mut b = r.products().to_vec();
            a.sort_unstable();
            b.sort_unstable();
            (a, b)
        })
        .collect();
    let expected = [
        (vec![(0, 1)], vec![(1, 1)]),
        (vec![(1, 2)], vec![(1, 1), (2, 1)]),
        (vec![(1, 1), (2, 1)], vec![(0, 1), (2, 1)]),
    ];
    if shape != expected {
        return unavailable("reaction network differs from A -> B, 2B -> B + C, B + C -> A + C");
    }
    let k = |i: usize| m.reactions()[i].rate_constant();
    Ok(RoberRates {
        k1: k(0),
        k2: k(1),
        k3: k(2),
    })
}

/// [`OdeSystem`] view of a [`ReducedSystem`] with a warm-started closure.
pub struct ReducedOde<'a> {
    system: &'a ReducedSystem,
    last: Option<Vec<f64>>,
}

impl<'a> ReducedOde<'a> {
    pub fn new(system: &'a ReducedSystem) -> Self {
        Self { system, last: None }
    }

    fn closure(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>, SystemError> {
        let q = self
            .system
            .closure(t, y, self.last.as_deref())
            .map_err(|e| SystemError(e.to_string()))?;
        self.last = Some(q.clone());
        Ok(q)
    }
}

impl OdeSystem for ReducedOde<'_> {
    fn dim(&self) -> usize {
        self.system.n_non_qss()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), SystemError> {
        let q = self.closure(t, y)?;
        let f = self
            .system
            .reduced_rhs_with(y, &q)
            .map_err(|e| SystemError(e.to_string()))?;
        dydt.copy_from_slice(&f);
        Ok(())
    }

    fn jacobian(&mut self, t: f64, y: &[f64], jac: &mut [f64]) -> Result<(), SystemError> {
        let q = self.closure(t, y)?;
        let j = self
            .system
            .reduced_jacobian_with(y, &q)
            .map_err(|e| SystemError(e.to_string()))?;
        jac.copy_from_slice(j.as_slice().expect("standard layout"));
        Ok(())
    }
}
