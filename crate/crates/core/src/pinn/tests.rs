use super::*;
use crate::autodiff::{Dual, Tape};
use crate::integrators::{integrate_bdf, log_grid, KineticSystem, SolverConfig};
use crate::mechanism::{builtin_rober, parse_mechanism};
use crate::qssa::{ClosureMode, QssPartition, ReducedSystem};
use proptest::prelude::*;
use rand::Rng;

fn rober_reduced() -> ReducedSystem {
    ReducedSystem::new(builtin_rober(), QssPartition::new(3, [1]).unwrap(), ClosureMode::ClosedFormRober).unwrap()
}

fn zero_pinn(system: &PinnSystem, hidden: usize, transform: OutputTransform) -> Pinn {
    let widths = [1, hidden, system.n_trained()];
    let model = MlpModel::from_params(&widths, vec![0.0; parameter_count(&widths)], 0, transform).unwrap();
    Pinn::new(model, system, None).unwrap()
}

fn loss_value(pinn: &Pinn, system: &PinnSystem, t: &[f64], w: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let eval = training_loss(&mut tape, pinn, system, t, w, None).unwrap();
    tape.scalar(eval.loss)
}

/// Independent formula `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
fn gelu_oracle(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

#[test]
fn gelu_examples() {
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(1.0) - gelu_oracle(1.0)).abs() < 1e-15);
    assert!((gelu(1.0) - 0.841192).abs() < 1e-6);
    let tail = gelu(-10.0);
    assert!(tail > -1e-6 && tail <= 0.0, "{tail}");
}

#[test]
fn xavier_bounds_and_determinism() {
    let widths = [1, 128, 128, 2];
    let p = xavier_init(&widths, 7);
    assert_eq!(p.len(), parameter_count(&widths));
    let bound = (6.0f64 / 256.0).sqrt();
    assert!((bound - 0.153093).abs() < 1e-6);
    let hidden = &p[256..256 + 128 * 128];
    assert!(hidden.iter().all(|w| w.abs() <= bound));
    assert!(hidden.iter().any(|w| w.abs() > 0.9 * bound));
    assert!(p[128..256].iter().all(|&b| b == 0.0));
    assert_eq!(p, xavier_init(&widths, 7));
    assert_ne!(p, xavier_init(&widths, 8));

    let tiny = xavier_init(&[1, 1], 3);
    assert!(tiny[0].abs() <= 3f64.sqrt());
    assert_eq!(tiny[1], 0.0);
}

#[test]
fn invalid_widths_rejected() {
    assert!(MlpModel::new(&[1, 2], 0, OutputTransform::HardIc).is_err());
    assert!(MlpModel::new(&[2, 4, 1], 0, OutputTransform::HardIc).is_err());
    assert!(MlpModel::new(&[1, 0, 1], 0, OutputTransform::HardIc).is_err());
}

#[test]
fn zero_network_outputs_zero_and_keeps_y0() {
    let model = MlpModel::from_params(&[1, 4, 3], vec![0.0; parameter_count(&[1, 4, 3])], 0, OutputTransform::HardIc)
        .unwrap();
    let y0 = [1.0, 0.0, 0.5];
    for t in [1e-5, 1.0, 1e5] {
        assert_eq!(model.forward(t).unwrap(), vec![0.0; 3]);
        assert_eq!(hard_ic_transform(&model, &y0, t).unwrap(), y0.to_vec());
    }
    assert_eq!(model.output_width(), 3);
}

#[test]
fn hard_ic_domain() {
    let model = MlpModel::new(&[1, 4, 2], 1, OutputTransform::HardIc).unwrap();
    assert_eq!(model.forward(0.0), Err(PinnError::InvalidTime(0.0)));
    assert!(hard_ic_transform(&model, &[1.0, 0.0], -1.0).is_err());
    assert_eq!(hard_ic_transform(&model, &[1.0, 0.25], 0.0).unwrap(), vec![1.0, 0.25]);
}

#[test]
fn forward_tangent_matches_finite_differences() {
    let model = MlpModel::new(&[1, 8, 8, 2], 4, OutputTransform::HardIc).unwrap();
    let y0 = [1.0, 0.0];
    for t in [1e-3, 0.37, 2.0, 55.0] {
        let h = 1e-5 * t;
        let d = hard_ic_transform(&model, &y0, Dual::variable(t)).unwrap();
        let up = hard_ic_transform(&model, &y0, t + h).unwrap();
        let dn = hard_ic_transform(&model, &y0, t - h).unwrap();
        for k in 0..2 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            assert!((d[k].tangent - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "t={t} k={k}: {} vs {fd}", d[k].tangent);
        }
        let raw = model.forward(Dual::variable(t)).unwrap();
        let (rup, rdn) = (model.forward(t + h).unwrap(), model.forward(t - h).unwrap());
        for k in 0..2 {
            let fd = (rup[k] - rdn[k]) / (2.0 * h);
            assert!((raw[k].tangent - fd).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }
}

#[test]
fn batched_and_scalar_predictions_agree() {
    let system = PinnSystem::Full(&builtin_rober());
    let model = MlpModel::new(&[1, 6, 6, 3], 2, OutputTransform::HardIc).unwrap();
    let pinn = Pinn::new(model, &system, Some(vec![1.0, 1e-4, 1.0])).unwrap();
    let times = [0.0, 1e-4, 0.5, 30.0];
    let batch = pinn.predict_many(&times).unwrap();
    for (i, &t) in times.iter().enumerate() {
        let single = pinn.predict(t).unwrap();
        for k in 0..3 {
            assert!((batch[[i, k]] - single[k]).abs() <= 1e-14 * (1.0 + single[k].abs()));
        }
    }
    assert_eq!(batch.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
}

#[test]
fn log_uniform_median_and_determinism() {
    let cfg = TrainingConfig::rober();
    let mut s = sample_collocation(&cfg, &mut rng_stream(11, STREAM_COLLOCATION));
    assert_eq!(s.len(), 2500);
    assert!(s.iter().all(|&t| (1e-5..=1e5).contains(&t)));
    assert_eq!(s, sample_collocation(&cfg, &mut rng_stream(11, STREAM_COLLOCATION)));
    s.sort_by(f64::total_cmp);
    let median = 0.5 * (s[1249] + s[1250]);
    // Position of the median on the log axis is 0.5 within 10%, i.e. within
    // half a decade of t = 1. The sample median's own spread is about 0.1
    // decade at n = 2500, so a 10% window on t itself would fail by chance.
    let frac = (median.log10() + 5.0) / 10.0;
    assert!((frac - 0.5).abs() <= 0.1 * 0.5, "median {median}");

    let mut flat = cfg.clone();
    flat.t_min = 3.0;
    flat.t_max = 3.0;
    assert!(sample_collocation(&flat, &mut rng_stream(0, 1)).iter().all(|&t| t == 3.0));
}

#[test]
fn uniform_sampling_range() {
    let cfg = TrainingConfig::pollu();
    let s = sample_collocation(&cfg, &mut rng_stream(3, STREAM_COLLOCATION));
    assert!(s.iter().all(|&t| (1e-3..=60.0).contains(&t)));
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    assert!((mean - 30.0).abs() < 2.0);
}

#[test]
fn adam_first_step() {
    let mut p = [0.0];
    let mut st = AdamState::new(1);
    adam_step(&mut p, &[1.0], &mut st, 1e-3).unwrap();
    // m_hat = v_hat = 1 after bias correction.
    let want = -1e-3 / (1.0 + ADAM_EPSILON);
    assert!((p[0] - want).abs() < 1e-18);
    assert!((p[0] + 9.99999995e-4).abs() < 1e-11);
    assert_eq!(st.steps(), 1);
}

#[test]
fn adam_zero_gradient_and_non_finite() {
    let mut p = [0.3, -2.0];
    let mut st = AdamState::new(2);
    for _ in 0..10 {
        adam_step(&mut p, &[0.0, 0.0], &mut st, 1e-3).unwrap();
    }
    assert_eq!(p, [0.3, -2.0]);
    let before = st.clone();
    assert_eq!(adam_step(&mut p, &[f64::NAN, 0.0], &mut st, 1e-3), Err(PinnError::NonFiniteGradient));
    assert_eq!(st, before);
    assert_eq!(p, [0.3, -2.0]);
}

#[test]
fn loss_examples() {
    // Pure decay A -> B with rate 2: a zero network keeps y = y0 = (1, 0),
    // so the residual of A is 0 - (-2) = 2.
    let m = parse_mechanism("SPECIES: A B\nINIT: 1 0\nA -> B : 2\n").unwrap();
    let system = PinnSystem::Full(&m);
    let pinn = zero_pinn(&system, 3, OutputTransform::HardIc);
    let w = 0.7;
    let l = loss_value(&pinn, &system, &[0.5], &[w, 0.0]);
    assert!((l - w * 4.0).abs() < 1e-15);
    // Both species, several points: each row contributes 0.7*4 + 1.5*4.
    let l = loss_value(&pinn, &system, &[0.1, 1.0, 10.0], &[w, 1.5]);
    assert!((l - (w + 1.5) * 4.0).abs() < 1e-14);

    // No reactions: y = y0 is exact, loss 0.
    let frozen = parse_mechanism("SPECIES: A B\nINIT: 1 0\n").unwrap();
    let system = PinnSystem::Full(&frozen);
    let pinn = zero_pinn(&system, 3, OutputTransform::HardIc);
    assert_eq!(loss_value(&pinn, &system, &[1e-3, 1.0, 1e3], &[1.0, 1.0]), 0.0);
}

#[test]
fn ic_term_only_without_hard_ic() {
    let frozen = parse_mechanism("SPECIES: A B\nINIT: 1 0\n").unwrap();
    let system = PinnSystem::Full(&frozen);
    // Zero network without the transform predicts 0: IC gap is (1, 0).
    let pinn = zero_pinn(&system, 3, OutputTransform::None);
    assert_eq!(loss_value(&pinn, &system, &[1.0], &[1.0, 1.0]), 1.0);
}

#[test]
fn empty_batch_is_an_error() {
    let m = builtin_rober();
    let system = PinnSystem::Full(&m);
    let pinn = zero_pinn(&system, 2, OutputTransform::HardIc);
    let mut tape = Tape::new();
    assert!(matches!(
        residual_loss(&mut tape, &pinn, &system, &[], &[1.0; 3], None),
        Err(PinnError::EmptyBatch)
    ));
}

/// Central differences over every parameter of a 2x8 network.
fn check_training_gradient(system: &PinnSystem, seed: u64) {
    let widths = [1, 8, 8, system.n_trained()];
    let model = MlpModel::new(&widths, seed, OutputTransform::HardIc).unwrap();
    let base = Pinn::new(model, system, None).unwrap();
    let t = log_grid(1e-4, 3.0, 9);
    let w = vec![1.0; system.n_trained()];

    let mut tape = Tape::new();
    let eval = training_loss(&mut tape, &base, system, &t, &w, None).unwrap();
    let grad = tape.backward(eval.loss).unwrap().flatten();
    assert_eq!(grad.len(), base.model.n_params());

    let mut rng = rng_stream(seed, 9);
    let mut fds = Vec::new();
    for k in 0..grad.len() {
        let theta = base.model.params()[k];
        // Perturb around a random jitter so zero biases are not special.
        let h = 1e-4 * theta.abs().max(0.05) * (1.0 + 0.1 * rng.gen::<f64>());
        let eval_at = |d: f64| {
            let mut p = base.clone();
            p.model.params_mut()[k] += d;
            loss_value(&p, system, &t, &w)
        };
        fds.push((eval_at(h) - eval_at(-h)) / (2.0 * h));
    }
    let floor = 1e-4 * fds.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut checked = 0;
    for (k, (g, fd)) in grad.iter().zip(&fds).enumerate() {
        let scale = fd.abs().max(floor);
        assert!((g - fd).abs() <= 1e-5 * scale, "param {k}: analytic {g} vs fd {fd}");
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn regular_rober_gradient_matches_finite_differences() {
    let m = builtin_rober();
    for seed in [1, 2] {
        check_training_gradient(&PinnSystem::Full(&m), seed);
    }
}

#[test]
fn stiff_rober_gradient_matches_finite_differences() {
    let red = rober_reduced();
    for seed in [1, 2] {
        check_training_gradient(&PinnSystem::Reduced(&red), seed);
    }
}

#[test]
fn closure_failures_are_excluded_not_fatal() {
    // Under the closed form, a negative slow concentration passes through
    // the absolute-value guard, so every row stays usable.
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    let pinn = Pinn::new(MlpModel::new(&[1, 4, 2], 5, OutputTransform::HardIc).unwrap(), &system, None).unwrap();
    let mut warm = vec![None; 4];
    let mut tape = Tape::new();
    let eval = residual_loss(&mut tape, &pinn, &system, &[1e-3, 0.1, 1.0, 10.0], &[1.0, 1.0], Some(&mut warm)).unwrap();
    assert_eq!(eval.count + eval.excluded.len(), 4);
    assert!(warm.iter().all(|w| w.is_some()));
}

#[test]
fn overflowing_predictions_are_not_excluded() {
    let m = builtin_rober();
    let system = PinnSystem::Full(&m);
    let model = MlpModel::new(&[1, 4, 3], 5, OutputTransform::HardIc).unwrap();
    let pinn = Pinn::new(model, &system, Some(vec![1e300; 3])).unwrap();
    let mut tape = Tape::new();
    let eval = residual_loss(&mut tape, &pinn, &system, &[10.0, 1e4], &[1.0; 3], None).unwrap();
    assert!(eval.excluded.is_empty());
    assert!(!tape.scalar(eval.loss).is_finite());

    // A batch on which the closure fails everywhere is an error, not a
    // zero loss.
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    let model = MlpModel::new(&[1, 4, 2], 5, OutputTransform::HardIc).unwrap();
    let pinn = Pinn::new(model, &system, Some(vec![1e300; 2])).unwrap();
    let err = residual_loss(&mut Tape::new(), &pinn, &system, &[10.0, 1e4], &[1.0; 2], None).unwrap_err();
    assert!(matches!(err, PinnError::Closure(_)), "{err:?}");
}

#[test]
fn diverged_training_reports_non_finite_loss() {
    let m = builtin_rober();
    let system = PinnSystem::Full(&m);
    let cfg = TrainingConfig {
        y_ref_scale: Some(vec![1e300; 3]),
        ..tiny_config(5, 0)
    };
    let mut pinn = cfg.build_pinn(&[4], &system).unwrap();
    let err = train(&mut pinn, &system, &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, PinnError::NonFiniteLoss { step: 0, .. }), "{err:?}");
}

fn tiny_config(updates: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        n_collocation: 64,
        batch_size: 16,
        max_updates: updates,
        rng_seed: seed,
        record_every: 5,
        plateau_window: None,
        ..TrainingConfig::rober()
    }
}

#[test]
fn zero_updates_leave_model_unchanged() {
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    let cfg = tiny_config(0, 3);
    let mut pinn = cfg.build_pinn(&[8, 8], &system).unwrap();
    let before = pinn.clone();
    let mut seen = 0;
    let out = train(&mut pinn, &system, &cfg, &mut |_| seen += 1).unwrap();
    assert_eq!(pinn, before);
    assert!(out.history.is_empty());
    assert_eq!(seen, 0);
    assert_eq!(out.updates, 0);
    assert!(out.final_loss.is_finite());
}

#[test]
fn training_is_deterministic_and_records_history() {
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    let cfg = tiny_config(23, 5);
    let run = || {
        let mut pinn = cfg.build_pinn(&[8, 8], &system).unwrap();
        let mut streamed = Vec::new();
        let out = train(&mut pinn, &system, &cfg, &mut |r| streamed.push(r.step)).unwrap();
        (pinn, out, streamed)
    };
    let (p1, o1, s1) = run();
    let (p2, o2, _) = run();
    assert_eq!(p1.model.params(), p2.model.params());
    assert_eq!(o1.final_loss, o2.final_loss);
    let steps: Vec<usize> = o1.history.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 5, 10, 15, 20]);
    assert_eq!(s1, steps);
    for (a, b) in o1.history.iter().zip(&o2.history) {
        assert_eq!(a.total_loss, b.total_loss);
        assert_eq!(a.per_species_loss, b.per_species_loss);
    }
    for r in &o1.history {
        let sum: f64 = r.per_species_loss.iter().sum::<f64>() + r.ic_loss;
        assert!((r.total_loss - sum).abs() <= 1e-12 * r.total_loss.max(1e-300));
    }
    assert_eq!(o1.updates, 23);
}

#[test]
fn weighted_history_total() {
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    let mut cfg = tiny_config(6, 8);
    cfg.species_weights = Some(vec![2.0, 0.5]);
    let mut pinn = cfg.build_pinn(&[6, 6], &system).unwrap();
    let out = train(&mut pinn, &system, &cfg, &mut |_| {}).unwrap();
    for r in &out.history {
        let want = 2.0 * r.per_species_loss[0] + 0.5 * r.per_species_loss[1];
        assert!((r.total_loss - want).abs() <= 1e-12 * want);
        assert_eq!(r.ic_loss, 0.0);
    }
}

#[test]
fn plateau_stops_early() {
    // A vanishing learning rate leaves the loss flat, so the second window
    // cannot improve on the first.
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    let mut cfg = tiny_config(5000, 1);
    cfg.learning_rate = 1e-14;
    cfg.plateau_window = Some(50);
    let mut pinn = cfg.build_pinn(&[4, 4], &system).unwrap();
    let out = train(&mut pinn, &system, &cfg, &mut |_| {}).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.updates, 100);
}

#[test]
fn train_rejects_mismatched_inputs() {
    let m = builtin_rober();
    let red = rober_reduced();
    let cfg = tiny_config(1, 0);
    let mut pinn = cfg.build_pinn(&[4, 4], &PinnSystem::Full(&m)).unwrap();
    assert!(matches!(
        train(&mut pinn, &PinnSystem::Reduced(&red), &cfg, &mut |_| {}),
        Err(PinnError::SpeciesMismatch(_))
    ));
    let mut bad = cfg.clone();
    bad.batch_size = 1000;
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.t_min = 0.0;
    assert!(bad.validate().is_err());
    let mut bad = cfg;
    bad.species_weights = Some(vec![1.0]);
    assert!(matches!(
        train(&mut pinn, &PinnSystem::Full(&m), &bad, &mut |_| {}),
        Err(PinnError::SpeciesMismatch(_))
    ));
}

#[test]
fn rmse_oracle_and_offset() {
    let m = builtin_rober();
    let times: Vec<f64> = std::iter::once(0.0).chain(log_grid(1e-5, 1e5, 200)).collect();
    let reference =
        integrate_bdf(&mut KineticSystem(&m), m.initial_concentrations(), m.t_span(), &SolverConfig::default(), &times)
            .unwrap();
    let mut reference = reference;
    reference.names = m.species().to_vec();
    let grid = log_grid(1e-5, 1e5, 200);
    assert_eq!(evaluate_rmse(&reference, &reference, &["A", "B", "C"], &grid).unwrap(), vec![0.0; 3]);

    let mut shifted = reference.clone();
    shifted.states.column_mut(0).mapv_inplace(|v| v + 0.125);
    let r = evaluate_rmse(&shifted, &reference, &["A", "C"], &grid).unwrap();
    assert!((r[0] - 0.125).abs() < 1e-15);
    assert_eq!(r[1], 0.0);

    assert!(matches!(
        evaluate_rmse(&reference, &reference, &["Z"], &grid),
        Err(PinnError::SpeciesMismatch(_))
    ));
    assert!(evaluate_rmse(&reference, &reference, &["A"], &[2e5]).is_err());
    assert_eq!(default_eval_grid(1e-5, 1e5).len(), 1000);
}

#[test]
fn qss_reconstruction_examples() {
    let red = rober_reduced();
    let system = PinnSystem::Reduced(&red);
    // Zero network keeps (A, C) = (1, 0).
    let pinn = zero_pinn(&system, 3, OutputTransform::HardIc);
    let prof = reconstruct_qss_profile(&pinn, &red, &[1e-3, 1.0]).unwrap();
    assert_eq!(prof.species, vec!["B".to_string()]);
    assert!(prof.missing.is_empty());
    // k1 a1 = k2 b^2 + k3 b a3 with a3 = 0: b = sqrt(0.04 / 3e7).
    let b = (0.04f64 / 3e7).sqrt();
    assert!((b - 3.6515e-5).abs() < 1e-9);
    assert!((prof.values[[0, 0]] - b).abs() < 1e-15);

    // Zero slow concentrations: zero QSS concentration.
    let mut empty = pinn.clone();
    empty.y0 = vec![0.0, 0.0];
    let prof = reconstruct_qss_profile(&empty, &red, &[1.0]).unwrap();
    assert_eq!(prof.values[[0, 0]], 0.0);
}

#[test]
fn checkpoint_round_trip() {
    let m = builtin_rober();
    let system = PinnSystem::Full(&m);
    let model = MlpModel::new(&[1, 5, 4, 3], 12, OutputTransform::None).unwrap();
    let pinn = Pinn::new(model, &system, Some(vec![1.0, 3e-5, 1.0])).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&pinn, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("widths=1,5,4,3\nactivation=gelu\nseed=12\ntransform=none\n"));
    let back = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, pinn);

    let broken = text.replace("activation=gelu", "activation=relu");
    assert!(matches!(read_checkpoint(broken.as_bytes()), Err(PinnError::Checkpoint { .. })));
    let short: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    assert!(read_checkpoint(short.as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_ic_exact_at_zero(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let model = MlpModel::new(&[1, 6, 6, 2], seed, OutputTransform::HardIc).unwrap();
        let y = hard_ic_transform(&model, &[a, b], 0.0).unwrap();
        prop_assert_eq!(y, vec![a, b]);
    }

    #[test]
    fn loss_is_non_negative(seed in any::<u64>(), lt in -4.0f64..2.0) {
        let red = rober_reduced();
        let system = PinnSystem::Reduced(&red);
        let pinn = Pinn::new(MlpModel::new(&[1, 5, 2], seed, OutputTransform::HardIc).unwrap(), &system, None).unwrap();
        let l = loss_value(&pinn, &system, &[10f64.powf(lt)], &[1.0, 1.0]);
        prop_assert!(l >= 0.0 && l.is_finite());
    }
}
