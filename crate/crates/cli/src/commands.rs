//! Subcommand implementations. Each writes its artifacts plus
//! `manifest.ini` and `config.ini` into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use kinetic_pinn::integrators::{
    integrate, linear_grid, log_grid, stiffness_ratio, stiffness_spectrum, write_trajectory_csv, KineticSystem,
    Method, SolutionTrajectory, SolverConfig,
};
use kinetic_pinn::mechanism::{builtin, Mechanism, StateVector};
use kinetic_pinn::pinn::{
    evaluate_rmse, read_checkpoint, reconstruct_qss_profile, train as train_pinn, write_checkpoint, LossRecord,
    Pinn, PinnError, PinnSystem, Predictor, TrainOutcome,
};
use kinetic_pinn::qssa::{
    parse_mechanism_with_partition, select_qss_species, serialize_with_partition, ClosureMode, QssPartition,
    ReducedOde, ReducedSystem,
};
use sha2::{Digest, Sha256};

use crate::config::{ClosureChoice, ExperimentConfig, GridKind, TrainMode, WeightSpec};
use crate::manifest::RunManifest;
use crate::plot::{read_series, render_svg, Series};
use crate::CliError;

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Configuration mistakes surface as exit code 2, everything else as 3.
fn pinn_err(e: PinnError) -> CliError {
    match e {
        PinnError::InvalidConfig(_) | PinnError::SpeciesMismatch(_) | PinnError::Checkpoint { .. } => config_err(e),
        PinnError::Io(m) => CliError::Io(m),
        _ => numeric(e),
    }
}

/// Seed of sweep cell `index`: the first eight bytes of
/// SHA-256(`base` ‖ `index`), so cells are independent of sweep order.
pub fn split_seed(base: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// The mechanism and any `QSS:` line its file carries.
fn load_mechanism(cfg: &ExperimentConfig) -> Result<(Mechanism, Option<QssPartition>), CliError> {
    if let Some(name) = cfg.mechanism.strip_prefix("builtin:") {
        return Ok((builtin(name).map_err(config_err)?, None));
    }
    let text = fs::read_to_string(&cfg.mechanism)
        .map_err(|e| CliError::Config(format!("cannot read mechanism {}: {e}", cfg.mechanism)))?;
    parse_mechanism_with_partition(&text).map_err(config_err)
}

fn solver_config(cfg: &ExperimentConfig, method: Method) -> SolverConfig {
    SolverConfig::with_method(method).tolerances(cfg.solver.rtol, cfg.solver.atol)
}

/// Output times over the mechanism span (end possibly overridden).
fn output_grid(cfg: &ExperimentConfig, m: &Mechanism) -> Result<(f64, f64, Vec<f64>), CliError> {
    let (t0, default_end) = m.t_span();
    let t1 = cfg.solver.t_end.unwrap_or(default_end);
    if !(t1 > t0) {
        return Err(CliError::Config(format!("span end {t1} must exceed the start {t0}")));
    }
    if cfg.solver.points < 2 {
        return Err(CliError::Config("[solver] points must be at least 2".into()));
    }
    let times = match cfg.solver.grid {
        GridKind::Linear => linear_grid(t0, t1, cfg.solver.points),
        GridKind::Log => {
            let first = cfg.solver.t_first.max(t0);
            if !(first > 0.0 && first < t1) {
                return Err(CliError::Config(format!("[solver] t_first {first} must lie in (0, {t1})")));
            }
            let mut g = vec![t0];
            g.extend(log_grid(first, t1, cfg.solver.points - 1).into_iter().filter(|&t| t > t0));
            g
        }
    };
    Ok((t0, t1, times))
}

fn reference_run(cfg: &ExperimentConfig, m: &Mechanism, times: &[f64], span: (f64, f64)) -> Result<SolutionTrajectory, CliError> {
    kinetic_run(cfg, m, Method::Bdf, times, span)
}

/// Full-mechanism run with columns named after the species.
fn kinetic_run(
    cfg: &ExperimentConfig,
    m: &Mechanism,
    method: Method,
    times: &[f64],
    span: (f64, f64),
) -> Result<SolutionTrajectory, CliError> {
    let mut sys = KineticSystem(m);
    let mut traj =
        integrate(&mut sys, m.initial_concentrations(), span, &solver_config(cfg, method), times).map_err(numeric)?;
    traj.names = m.species().to_vec();
    Ok(traj)
}

/// BDF reference over the full mechanism span on the configured grid.
fn full_span_reference(cfg: &ExperimentConfig, m: &Mechanism) -> Result<SolutionTrajectory, CliError> {
    let mut c = cfg.clone();
    c.solver.t_end = None;
    let (t0, t1, times) = output_grid(&c, m)?;
    reference_run(&c, m, &times, (t0, t1))
}

/// Partition from `[qssa] species`, the mechanism file, or selection by
/// threshold on a BDF reference (in that order).
fn resolve_partition(
    cfg: &ExperimentConfig,
    m: &Mechanism,
    from_file: Option<QssPartition>,
) -> Result<QssPartition, CliError> {
    if let Some(names) = &cfg.qssa.species {
        return QssPartition::from_names(m, names).map_err(config_err);
    }
    if let Some(p) = from_file {
        return Ok(p);
    }
    let reference = full_span_reference(cfg, m)?;
    select_qss_species(m, &reference, cfg.qssa.threshold).map_err(config_err)
}

fn reduced_system(cfg: &ExperimentConfig, m: &Mechanism, p: QssPartition) -> Result<ReducedSystem, CliError> {
    let build = |mode| ReducedSystem::new(m.clone(), p.clone(), mode);
    let sys = match cfg.qssa.closure {
        ClosureChoice::ClosedForm => build(ClosureMode::ClosedFormRober).map_err(config_err)?,
        ClosureChoice::Newton => build(ClosureMode::Newton).map_err(config_err)?,
        ClosureChoice::Auto => build(ClosureMode::ClosedFormRober)
            .or_else(|_| build(ClosureMode::Newton))
            .map_err(config_err)?,
    };
    Ok(sys.with_selection_threshold(cfg.qssa.threshold))
}

fn trajectory_bytes(traj: &SolutionTrajectory) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_trajectory_csv(traj, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(buf)
}

fn maybe_svg(
    cfg: &ExperimentConfig,
    run: &mut RunManifest,
    csv_name: &str,
    svg_name: &str,
    logx: bool,
    logy: bool,
) -> Result<(), CliError> {
    if !cfg.output.svg {
        return Ok(());
    }
    let series = read_series(&run.path(csv_name))?;
    let (svg, dropped) = render_svg(&series, logx, logy, csv_name);
    if dropped > 0 {
        eprintln!("warning: {dropped} non-positive points omitted from {svg_name}");
    }
    run.write_file(svg_name, svg.as_bytes())?;
    Ok(())
}

fn new_run(cfg: &ExperimentConfig, command: &str) -> Result<RunManifest, CliError> {
    RunManifest::new(command, &cfg.output.directory, cfg.to_text())
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (m, file_partition) = load_mechanism(cfg)?;
    let mut run = new_run(cfg, "simulate")?;
    let (t0, t1, times) = output_grid(cfg, &m)?;
    let started = Instant::now();
    let traj = if cfg.solver.reduced {
        let p = resolve_partition(cfg, &m, file_partition)?;
        let reduced = reduced_system(cfg, &m, p)?;
        let solver = solver_config(cfg, cfg.solver.method);
        let start = match cfg.solver.reduced_start {
            Some(ts) if !(t0..t1).contains(&ts) => {
                return Err(CliError::Config(format!("solver.reduced_start {ts} lies outside [{t0}, {t1})")));
            }
            Some(ts) => ts,
            None if reduced.closure_solvable_at_start() => t0,
            None => {
                let ts = t0 + 1e-5 * (t1 - t0);
                eprintln!("warning: no QSS closure at the initial state; reduced integration starts at t = {ts:e}");
                ts
            }
        };
        // Rows before the start come from the full system.
        let split = times.partition_point(|&t| t < start);
        let reference = solver_config(cfg, Method::Bdf);
        let y_start = reduced.full_state_at(start, &reference).map_err(numeric)?;
        let mut reduced_times = vec![start];
        reduced_times.extend(times[split..].iter().copied().filter(|&t| t > start));
        let mut ode = ReducedOde::new(&reduced);
        let mut slow = integrate(&mut ode, &y_start, (start, t1), &solver, &reduced_times).map_err(numeric)?;
        slow.names = reduced.partition().non_qss_names(&m).into_iter().map(str::to_string).collect();
        let (rebuilt, failures) = reduced.reconstruct_full(&slow);
        if !failures.is_empty() {
            eprintln!("warning: closure failed at {} output times (QSS columns are NaN there)", failures.len());
        }
        // Drop the start row unless it was requested.
        let skip = usize::from(times.get(split) != Some(&start));
        let late = rebuilt.states.slice(ndarray::s![skip.., ..]);
        let early = if split > 0 {
            Some(kinetic_run(cfg, &m, Method::Bdf, &times[..split], (t0, start))?)
        } else {
            None
        };
        let early_states = early.as_ref().map(|e| e.states.view());
        let states = match early_states {
            Some(e) => ndarray::concatenate(ndarray::Axis(0), &[e, late]).map_err(numeric)?,
            None => late.to_owned(),
        };
        SolutionTrajectory {
            names: rebuilt.names,
            times: times.clone(),
            states,
            stats: slow.stats,
        }
    } else {
        kinetic_run(cfg, &m, cfg.solver.method, &times, (t0, t1))?
    };
    run.timing("integrate", started.elapsed().as_secs_f64());
    run.write_file("trajectory.csv", &trajectory_bytes(&traj)?)?;
    maybe_svg(cfg, &mut run, "trajectory.csv", "trajectory.svg", cfg.solver.grid == GridKind::Log, false)?;
    println!(
        "simulate: {} rows, {} accepted / {} rejected steps",
        traj.times.len(),
        traj.stats.accepted_steps,
        traj.stats.rejected_steps
    );
    run.finish()?;
    Ok(())
}

pub fn reduce(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (m, file_partition) = load_mechanism(cfg)?;
    let mut run = new_run(cfg, "reduce")?;
    let started = Instant::now();
    let reference = full_span_reference(cfg, &m)?;
    run.timing("reference", started.elapsed().as_secs_f64());
    let partition = match (&cfg.qssa.species, file_partition) {
        (Some(names), _) => QssPartition::from_names(&m, names).map_err(config_err)?,
        (None, Some(p)) => p,
        (None, None) => select_qss_species(&m, &reference, cfg.qssa.threshold).map_err(config_err)?,
    };
    if partition.qss_indices().is_empty() {
        return Err(CliError::Config(format!(
            "no species stays below the threshold {:e}: empty QSS set",
            cfg.qssa.threshold
        )));
    }
    let line = partition.to_line(&m);
    run.write_file("partition.txt", format!("{line}\n").as_bytes())?;
    run.write_file("reduced_mechanism.txt", serialize_with_partition(&m, &partition).as_bytes())?;

    let maxima = reference.max_per_component();
    let mut csv = String::from("species,max_concentration,qss\n");
    for (i, name) in m.species().iter().enumerate() {
        let q = partition.qss_indices().contains(&i);
        let _ = writeln!(csv, "{name},{:.16e},{}", maxima[i], u8::from(q));
    }
    run.write_file("maxima.csv", csv.as_bytes())?;

    // Closure self-test: solve the closure at reference slow states and
    // compare with the reference QSS concentrations.
    let reduced = reduced_system(cfg, &m, partition.clone())?;
    let qss_max: Vec<f64> = partition.qss_indices().iter().map(|&i| maxima[i]).collect();
    let mut test = String::from("t,iterations,residual_norm,converged,max_scaled_error\n");
    let mut warm: Option<Vec<f64>> = None;
    let mut failures = 0;
    for (r, &t) in reference.times.iter().enumerate() {
        let row = reference.row(r);
        let slow = partition.gather_non_qss(&row);
        let truth = partition.gather_qss(&row);
        match reduced.solve_qss_closure(t, &slow, warm.as_deref()) {
            Ok((q, report)) => {
                let err = q
                    .iter()
                    .zip(&truth)
                    .zip(&qss_max)
                    .map(|((a, b), s)| (a - b).abs() / s.max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                let _ = writeln!(
                    test,
                    "{t:.16e},{},{:.6e},{},{err:.6e}",
                    report.iterations,
                    report.final_residual_norm,
                    u8::from(report.converged)
                );
                warm = Some(q);
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(test, "{t:.16e},,,0,");
                eprintln!("warning: closure failed at t = {t:e}: {e}");
            }
        }
    }
    run.write_file("closure_selftest.csv", test.as_bytes())?;
    println!("{line}");
    println!(
        "reduce: {} QSS species ({} closure), {failures} closure failures",
        partition.qss_indices().len(),
        reduced.mode()
    );
    run.finish()?;
    Ok(())
}

/// Weights resolved against the trained species.
fn resolve_weights(
    cfg: &ExperimentConfig,
    m: &Mechanism,
    trained: &[usize],
) -> Result<Option<Vec<f64>>, CliError> {
    let spec = cfg.training.weights.clone().unwrap_or(if cfg.training.preset == "pollu" {
        WeightSpec::InverseMaxSquared
    } else {
        WeightSpec::Ones
    });
    Ok(match spec {
        WeightSpec::Ones => None,
        WeightSpec::Explicit(w) => Some(w),
        WeightSpec::InverseMaxSquared => {
            let maxima = full_span_reference(cfg, m)?.max_per_component();
            Some(
                trained
                    .iter()
                    .map(|&i| {
                        let mx = maxima[i];
                        if mx > 0.0 {
                            1.0 / (mx * mx)
                        } else {
                            1.0
                        }
                    })
                    .collect(),
            )
        }
    })
}

/// Everything needed to train on one configuration.
struct TrainingSetup {
    mechanism: Mechanism,
    reduced: Option<ReducedSystem>,
}

impl TrainingSetup {
    fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let (m, file_partition) = load_mechanism(cfg)?;
        let reduced = match cfg.training.mode {
            TrainMode::Regular => None,
            TrainMode::Stiff => {
                let p = resolve_partition(cfg, &m, file_partition)?;
                Some(reduced_system(cfg, &m, p)?)
            }
        };
        Ok(Self { mechanism: m, reduced })
    }

    fn system(&self) -> PinnSystem<'_> {
        match &self.reduced {
            Some(r) => PinnSystem::Reduced(r),
            None => PinnSystem::Full(&self.mechanism),
        }
    }
}

fn history_csv(species: &[String], history: &[LossRecord]) -> String {
    let mut out = format!("step,total_loss,{},wall_time\n", species.join(","));
    for rec in history {
        let _ = write!(out, "{},{:.16e}", rec.step, rec.total_loss);
        for v in &rec.per_species_loss {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = writeln!(out, ",{:.3}", rec.wall_time);
    }
    out
}

fn run_training(
    cfg: &ExperimentConfig,
    setup: &TrainingSetup,
    hidden: &[usize],
    seed: u64,
    verbose: bool,
) -> Result<(Pinn, TrainOutcome), CliError> {
    let system = setup.system();
    let mut tc = cfg.training_config();
    tc.rng_seed = seed;
    tc.species_weights = resolve_weights(cfg, &setup.mechanism, &system.trained_indices())?;
    tc.validate().map_err(pinn_err)?;
    let mut pinn = tc.build_pinn(hidden, &system).map_err(pinn_err)?;
    let mut sink = |rec: &LossRecord| {
        if verbose {
            eprintln!("step {:>8}  loss {:.6e}", rec.step, rec.total_loss);
        }
    };
    let outcome = train_pinn(&mut pinn, &system, &tc, &mut sink).map_err(pinn_err)?;
    Ok((pinn, outcome))
}

pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let setup = TrainingSetup::new(cfg)?;
    let mut run = new_run(cfg, "train")?;
    run.seed("training", cfg.training.seed);
    let started = Instant::now();
    let (pinn, outcome) = run_training(cfg, &setup, &cfg.widths, cfg.training.seed, true)?;
    run.timing("training", started.elapsed().as_secs_f64());

    let mut ckpt = Vec::new();
    write_checkpoint(&pinn, &mut ckpt).map_err(pinn_err)?;
    run.write_file("checkpoint.txt", &ckpt)?;
    run.write_file("loss_history.csv", history_csv(&pinn.species, &outcome.history).as_bytes())?;
    let mut summary = String::from("key,value\n");
    let _ = writeln!(summary, "mode,{}", cfg.training.mode);
    let _ = writeln!(summary, "updates,{}", outcome.updates);
    let _ = writeln!(summary, "stopped_early,{}", outcome.stopped_early);
    let _ = writeln!(summary, "final_loss,{:.16e}", outcome.final_loss);
    for (s, v) in pinn.species.iter().zip(&outcome.final_per_species) {
        let _ = writeln!(summary, "final_loss_{s},{v:.16e}");
    }
    let _ = writeln!(summary, "excluded_points,{}", outcome.excluded_points);
    let _ = writeln!(summary, "closure_failures,{}", outcome.closure_failures);
    run.write_file("train_summary.csv", summary.as_bytes())?;
    maybe_svg(cfg, &mut run, "loss_history.csv", "loss_history.svg", false, true)?;
    println!(
        "train: {} updates{}, final loss {:.6e}",
        outcome.updates,
        if outcome.stopped_early { " (plateau stop)" } else { "" },
        outcome.final_loss
    );
    run.finish()?;
    Ok(())
}

/// A checkpoint, or a trajectory CSV replayed as a predictor.
enum Model {
    Network(Pinn),
    Replay(SolutionTrajectory),
}

impl Model {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        if text.starts_with("t,") {
            let traj = kinetic_pinn::integrators::read_trajectory_csv(BufReader::new(text.as_bytes()))
                .map_err(config_err)?;
            Ok(Self::Replay(traj))
        } else {
            Ok(Self::Network(read_checkpoint(BufReader::new(text.as_bytes())).map_err(pinn_err)?))
        }
    }

    fn predictor(&self) -> &dyn Predictor {
        match self {
            Self::Network(p) => p,
            Self::Replay(t) => t,
        }
    }
}

fn eval_grid(cfg: &ExperimentConfig, t_min: f64, t_max: f64) -> Result<Vec<f64>, CliError> {
    if !(t_max > t_min) || cfg.evaluate.points < 2 {
        return Err(CliError::Config(format!(
            "evaluation grid [{t_min}, {t_max}] with {} points is empty",
            cfg.evaluate.points
        )));
    }
    match cfg.evaluate.grid {
        GridKind::Log if t_min > 0.0 => Ok(log_grid(t_min, t_max, cfg.evaluate.points)),
        GridKind::Log => Err(CliError::Config("log evaluation grid needs t_min > 0".into())),
        GridKind::Linear => Ok(linear_grid(t_min, t_max, cfg.evaluate.points)),
    }
}

/// BDF reference whose rows are exactly `times` (plus the span start).
fn reference_on(cfg: &ExperimentConfig, m: &Mechanism, times: &[f64]) -> Result<SolutionTrajectory, CliError> {
    let (t0, _) = m.t_span();
    let mut out: Vec<f64> = vec![t0];
    out.extend(times.iter().copied().filter(|&t| t > t0));
    let end = *out.last().expect("non-empty");
    if end <= t0 {
        return Err(CliError::Config("evaluation grid lies before the span start".into()));
    }
    reference_run(cfg, m, &out, (t0, end))
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ckpt_path = cfg
        .evaluate
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluate needs --checkpoint or [evaluate] checkpoint".into()))?;
    let model = Model::load(ckpt_path)?;
    let (m, file_partition) = load_mechanism(cfg)?;
    let mut run = new_run(cfg, "evaluate")?;
    let tc = cfg.training_config();
    let t_min = cfg.evaluate.t_min.unwrap_or(tc.t_min);
    let t_max = cfg.evaluate.t_max.unwrap_or(tc.t_max);
    let times = eval_grid(cfg, t_min, t_max)?;
    let reference = match &cfg.evaluate.reference {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::Config(format!("cannot read reference {}: {e}", p.display())))?;
            kinetic_pinn::integrators::read_trajectory_csv(BufReader::new(f)).map_err(config_err)?
        }
        None => reference_on(cfg, &m, &times)?,
    };
    let predictor = model.predictor();
    let species = cfg.evaluate.species.clone().unwrap_or_else(|| predictor.species());
    let started = Instant::now();
    let rmse = evaluate_rmse(predictor, &reference, &species, &times).map_err(pinn_err)?;
    let mut csv = String::from("species,rmse,source\n");
    for (s, v) in species.iter().zip(&rmse) {
        let _ = writeln!(csv, "{s},{v:.16e},network");
    }

    let pred = predictor.predict(&times).map_err(pinn_err)?;
    let mut columns: Vec<String> = predictor.species();
    let mut extra: Option<ndarray::Array2<f64>> = None;
    if cfg.evaluate.qss {
        let Model::Network(pinn) = &model else {
            return Err(CliError::Config("QSS reconstruction needs a network checkpoint".into()));
        };
        let p = resolve_partition(cfg, &m, file_partition)?;
        let reduced = reduced_system(cfg, &m, p)?;
        let profile = reconstruct_qss_profile(pinn, &reduced, &times).map_err(pinn_err)?;
        let refv = reference.predict(&times).map_err(pinn_err)?;
        for (j, name) in profile.species.iter().enumerate() {
            let col = reference
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::Config(format!("reference lacks QSS species {name}")))?;
            let (mut ss, mut n) = (0.0, 0usize);
            for i in 0..times.len() {
                let v = profile.values[[i, j]];
                if v.is_finite() {
                    ss += (v - refv[[i, col]]).powi(2);
                    n += 1;
                }
            }
            let r = if n > 0 { (ss / n as f64).sqrt() } else { f64::NAN };
            let _ = writeln!(csv, "{name},{r:.16e},closure");
        }
        if !profile.missing.is_empty() {
            eprintln!("warning: closure failed at {} evaluation times", profile.missing.len());
        }
        columns.extend(profile.species.iter().cloned());
        extra = Some(profile.values);
    }
    run.timing("evaluate", started.elapsed().as_secs_f64());
    run.write_file("rmse.csv", csv.as_bytes())?;

    let mut out = format!("t,{}\n", columns.join(","));
    for (i, t) in times.iter().enumerate() {
        let _ = write!(out, "{t:.16e}");
        for v in pred.row(i) {
            let _ = write!(out, ",{v:.16e}");
        }
        if let Some(x) = &extra {
            for v in x.row(i) {
                if v.is_finite() {
                    let _ = write!(out, ",{v:.16e}");
                } else {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    run.write_file("predictions.csv", out.as_bytes())?;
    maybe_svg(cfg, &mut run, "predictions.csv", "predictions.svg", cfg.evaluate.grid == GridKind::Log, false)?;
    for (s, v) in species.iter().zip(&rmse) {
        println!("rmse {s} {v:.6e}");
    }
    run.finish()?;
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.sweep.seeds == 0 || cfg.sweep.architectures.is_empty() {
        return Err(CliError::Config("sweep needs at least one architecture and one seed".into()));
    }
    let tc = cfg.training_config();
    tc.validate().map_err(pinn_err)?;
    let setup = TrainingSetup::new(cfg)?;
    let species = setup.system().trained_species();
    let times = eval_grid(cfg, cfg.evaluate.t_min.unwrap_or(tc.t_min), cfg.evaluate.t_max.unwrap_or(tc.t_max))?;
    let reference = reference_on(cfg, &setup.mechanism, &times)?;
    let mut run = new_run(cfg, "sweep")?;
    run.seed("base", cfg.training.seed);

    let mut runs = format!(
        "architecture,replicate,seed,status,updates,final_loss,{}\n",
        species.iter().map(|s| format!("rmse_{s}")).collect::<Vec<_>>().join(",")
    );
    let mut summary = format!(
        "architecture,completed,{}\n",
        species.iter().map(|s| format!("median_rmse_{s}")).collect::<Vec<_>>().join(",")
    );
    let (mut failed, mut total) = (0, 0);
    for (a, arch) in cfg.sweep.architectures.iter().enumerate() {
        let mut per_species: Vec<Vec<f64>> = vec![Vec::new(); species.len()];
        for r in 0..cfg.sweep.seeds {
            total += 1;
            let seed = split_seed(cfg.training.seed, (a * cfg.sweep.seeds + r) as u64);
            run.seed(&format!("{arch}_{r}"), seed);
            let started = Instant::now();
            let result = run_training(cfg, &setup, &arch.hidden(), seed, false).and_then(|(pinn, outcome)| {
                let rmse = evaluate_rmse(&pinn, &reference, &species, &times).map_err(pinn_err)?;
                Ok((outcome, rmse))
            });
            run.timing(&format!("{arch}_{r}"), started.elapsed().as_secs_f64());
            match result {
                Ok((outcome, rmse)) => {
                    let _ = write!(runs, "{arch},{r},{seed},ok,{},{:.16e}", outcome.updates, outcome.final_loss);
                    for (j, v) in rmse.iter().enumerate() {
                        let _ = write!(runs, ",{v:.16e}");
                        per_species[j].push(*v);
                    }
                    runs.push('\n');
                    println!("sweep: {arch} replicate {r} ok (loss {:.3e})", outcome.final_loss);
                }
                Err(e) => {
                    failed += 1;
                    let msg = e.to_string().replace([',', '\n'], ";");
                    let _ = writeln!(runs, "{arch},{r},{seed},failed: {msg},,{}", ",".repeat(species.len().saturating_sub(1)));
                    eprintln!("sweep: {arch} replicate {r} failed: {e}");
                }
            }
        }
        let _ = write!(summary, "{arch},{}", per_species.first().map_or(0, Vec::len));
        for v in per_species.iter_mut() {
            let m = median(v);
            if m.is_finite() {
                let _ = write!(summary, ",{m:.16e}");
            } else {
                summary.push(',');
            }
        }
        summary.push('\n');
    }
    run.write_file("sweep_runs.csv", runs.as_bytes())?;
    run.write_file("sweep.csv", summary.as_bytes())?;
    run.finish()?;
    if failed > 0 {
        return Err(CliError::PartialSweep { failed, total });
    }
    Ok(())
}

pub fn stiffness(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (m, _) = load_mechanism(cfg)?;
    let mut run = new_run(cfg, "stiffness")?;
    let (t0, t1, times) = output_grid(cfg, &m)?;
    let started = Instant::now();
    let reference = reference_run(cfg, &m, &times, (t0, t1))?;
    let n = m.n_species();
    let mut csv = String::from("t,stiffness_ratio");
    for k in 0..n {
        let _ = write!(csv, ",re_{k},im_{k}");
    }
    csv.push('\n');
    let mut missing = 0usize;
    for (r, &t) in reference.times.iter().enumerate() {
        let state = StateVector::new(t, reference.row(r));
        let spectrum = match stiffness_spectrum(|s: &StateVector| m.jacobian(&s.y), &state) {
            Ok(s) => s,
            Err(e) => {
                // Marked missing: empty ratio and eigenvalue fields.
                missing += 1;
                eprintln!("warning: no spectrum at t = {t:e}: {e}");
                let _ = writeln!(csv, "{t:.16e},{}", ",".repeat(2 * n));
                continue;
            }
        };
        let mut sorted = spectrum.clone();
        sorted.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let _ = write!(csv, "{t:.16e}");
        match stiffness_ratio(&spectrum) {
            Ok(ratio) => {
                let _ = write!(csv, ",{ratio:.16e}");
            }
            Err(_) => csv.push(','),
        }
        for l in &sorted {
            let _ = write!(csv, ",{:.16e},{:.16e}", l.re, l.im);
        }
        csv.push('\n');
    }
    run.write_file("stiffness.csv", csv.as_bytes())?;
    run.timing("spectra", started.elapsed().as_secs_f64());

    // Explicit vs implicit cost over [t0, compare_end].
    let end = cfg.solver.compare_end;
    if !(end > t0) {
        return Err(CliError::Config(format!("[solver] compare_end {end} must exceed {t0}")));
    }
    let mut counts = String::from("method,accepted_steps,rejected_steps,rhs_evaluations,jacobian_evaluations\n");
    let mut accepted = Vec::new();
    for method in [Method::Bdf, Method::Dopri5] {
        let started = Instant::now();
        let traj = kinetic_run(cfg, &m, method, &[end], (t0, end))?;
        run.timing(&format!("steps_{method}"), started.elapsed().as_secs_f64());
        let s = traj.stats;
        let _ = writeln!(
            counts,
            "{method},{},{},{},{}",
            s.accepted_steps, s.rejected_steps, s.rhs_evaluations, s.jacobian_evaluations
        );
        accepted.push(s.accepted_steps);
    }
    run.write_file("step_counts.csv", counts.as_bytes())?;
    maybe_svg(cfg, &mut run, "stiffness.csv", "stiffness.svg", cfg.solver.grid == GridKind::Log, true)?;
    if missing > 0 {
        eprintln!("warning: {missing} output times have no spectrum");
    }
    println!(
        "stiffness: BDF {} steps, Dopri5 {} steps on [{t0}, {end}] (ratio {:.1})",
        accepted[0],
        accepted[1],
        accepted[1] as f64 / accepted[0].max(1) as f64
    );
    run.finish()?;
    Ok(())
}

pub fn plot(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.plot.inputs.is_empty() {
        return Err(CliError::Config("plot needs --input or [plot] inputs".into()));
    }
    let mut run = new_run(cfg, "plot")?;
    let multiple = cfg.plot.inputs.len() > 1;
    let mut all: Vec<Series> = Vec::new();
    for path in &cfg.plot.inputs {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for mut s in read_series(path)? {
            if multiple {
                s.name = format!("{stem}:{}", s.name);
            }
            all.push(s);
        }
    }
    let (svg, dropped) = render_svg(&all, cfg.plot.logx, cfg.plot.logy, &cfg.plot.title);
    if dropped > 0 {
        eprintln!("warning: {dropped} non-positive or non-finite points omitted on log axes");
    }
    run.write_file(&cfg.plot.file, svg.as_bytes())?;
    println!("plot: {} series -> {}", all.len(), run.path(&cfg.plot.file).display());
    run.finish()?;
    Ok(())
}
