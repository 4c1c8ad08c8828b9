use super::*;
use ndarray::{array, Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Central-difference check of `build` (params -> tape, seed) over every
/// parameter entry.
fn check_gradient(params: &[Array2<f64>], build: &dyn Fn(&[Array2<f64>]) -> (Tape, Var), tol: f64) {
    let (tape, seed) = build(params);
    let grads = tape.backward(seed).unwrap().flatten();
    let mut fds = Vec::new();
    for p in 0..params.len() {
        for idx in 0..params[p].len() {
            let eval = |delta: f64| {
                let mut q = params.to_vec();
                let slot = q[p].iter_mut().nth(idx).unwrap();
                *slot += delta;
                let (tape, seed) = build(&q);
                tape.scalar(seed)
            };
            let theta = params[p].iter().nth(idx).unwrap().abs();
            let h = 1e-5 * theta.max(0.1);
            fds.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    let floor = 1e-3 * fds.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (k, (g, fd)) in grads.iter().zip(&fds).enumerate() {
        let scale = fd.abs().max(floor).max(1e-12);
        assert!((g - fd).abs() <= tol * scale, "entry {k}: analytic {g} vs fd {fd}");
    }
}

#[test]
fn square_gradient() {
    let mut tape = Tape::new();
    let w = tape.parameter(array![[3.0]]);
    let y = tape.mul(w, w);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.loss_value, 9.0);
    assert_eq!(g.flatten(), vec![6.0]);
}

#[test]
fn gradient_through_tangent_channel() {
    // d/dt (w t) = w, so d/dw of that is 1.
    let mut tape = Tape::new();
    let w = tape.parameter(array![[2.5]]);
    let t = tape.constant_with_tangent(array![[0.7]], array![[1.0]]);
    let y = tape.mul(w, t);
    let dy = tape.tangent_of(y);
    let g = tape.backward(dy).unwrap();
    assert_eq!(g.loss_value, 2.5);
    assert_eq!(g.flatten(), vec![1.0]);
}

#[test]
fn seed_must_be_scalar() {
    let mut tape = Tape::new();
    let w = tape.parameter(array![[1.0, 2.0]]);
    assert_eq!(tape.backward(w), Err(TapeError::SeedNotScalar(1, 2)));
}

#[test]
fn domain_errors_are_reported() {
    let mut tape = Tape::new();
    let x = tape.constant(array![[1.0, -1.0]]);
    assert!(tape.unary(x, Unary::Ln).is_err());
    assert!(tape.unary(x, Unary::Sqrt).is_err());
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let mut tape = Tape::new();
    let a = tape.parameter(array![[1.0]]);
    let _b = tape.parameter(array![[1.0, 2.0]]);
    let y = tape.scale(a, 4.0);
    assert_eq!(tape.backward(y).unwrap().flatten(), vec![4.0, 0.0, 0.0]);
}

#[test]
fn empty_mask_gives_zero_loss() {
    let mut tape = Tape::new();
    let a = tape.parameter(array![[1.0], [2.0]]);
    let l = tape.weighted_square_mean(a, &[1.0], &[false, false]);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.loss_value, 0.0);
    assert_eq!(g.flatten(), vec![0.0, 0.0]);
}

/// Row map `(a, b) -> (a b, a^2)` evaluated outside the tape.
fn custom_map(tape: &mut Tape, x: Var) -> Var {
    let v = tape.value(x).clone();
    let n = v.nrows();
    let mut out = Array2::zeros((n, 2));
    let mut jac = Array3::zeros((n, 2, 2));
    for r in 0..n {
        let (a, b) = (v[[r, 0]], v[[r, 1]]);
        out[[r, 0]] = a * b;
        out[[r, 1]] = a * a;
        jac[[r, 0, 0]] = b;
        jac[[r, 0, 1]] = a;
        jac[[r, 1, 0]] = 2.0 * a;
    }
    tape.row_jacobian(x, out, jac)
}

/// A graph touching every operation, with a loss that depends on tangents.
fn every_op_graph(params: &[Array2<f64>]) -> (Tape, Var) {
    let n = 5;
    let t = Array2::from_shape_fn((n, 1), |(r, _)| 0.3 + 0.4 * r as f64);
    let mut tape = Tape::new();
    let w1 = tape.parameter(params[0].clone());
    let b1 = tape.parameter(params[1].clone());
    let w2 = tape.parameter(params[2].clone());
    let b2 = tape.parameter(params[3].clone());
    let shift = tape.parameter(params[4].clone());
    let x = tape.constant_with_tangent(t.mapv(f64::ln), t.mapv(|v| 1.0 / v));
    let z = tape.linear(x, w1, b1);
    let h = tape.gelu(z);
    let h2 = tape.unary(h, Unary::Tanh).unwrap();
    let hs = tape.scale(h, 0.3);
    let e = tape.unary(hs, Unary::Exp).unwrap();
    let m = tape.mul(h2, e);
    let o = tape.linear(m, w2, b2);
    let tcol = tape.constant_with_tangent(t.clone(), Array2::ones((n, 1)));
    let y = tape.scale_rows(tcol, o);
    let y = tape.add_row(y, shift);
    let a = tape.unary(y, Unary::Abs).unwrap();
    let one = tape.constant(Array2::ones((n, 3)));
    let a1 = tape.add(a, one);
    let s = tape.unary(a1, Unary::Sqrt).unwrap();
    let l = tape.unary(s, Unary::Ln).unwrap();
    let pair = tape.columns(l, &[2, 0]);
    let f2 = custom_map(&mut tape, pair);
    let mid = tape.columns(y, &[1]);
    let f = tape.assemble(3, &[(f2, &[0, 2]), (mid, &[1])]);
    let ydot = tape.tangent_of(y);
    let r = tape.sub(ydot, f);
    let loss1 = tape.weighted_square_mean(r, &[1.0, 0.5, 2.0], &[true, true, false, true, true]);
    let rr = tape.mul(r, r);
    let loss2 = tape.sum(rr);
    let loss2 = tape.scale(loss2, 0.1);
    let wsm = tape.weighted_square_mean(y, &[1.0, 1.0, 1.0], &[true; 5]);
    let loss3 = tape.tangent_of(wsm);
    let total = tape.add(loss1, loss2);
    let total = tape.add(total, loss3);
    (tape, total)
}

fn every_op_params(seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        random(&mut rng, (4, 1), 1.0),
        random(&mut rng, (1, 4), 0.5),
        random(&mut rng, (3, 4), 1.0),
        random(&mut rng, (1, 3), 0.5),
        random(&mut rng, (1, 3), 0.5),
    ]
}

#[test]
fn every_operation_matches_finite_differences() {
    for seed in 0..4 {
        check_gradient(&every_op_params(seed), &every_op_graph, 1e-5);
    }
}

#[test]
fn backward_is_deterministic() {
    let p = every_op_params(9);
    let (t1, s1) = every_op_graph(&p);
    let (t2, s2) = every_op_graph(&p);
    assert_eq!(t1.backward(s1).unwrap(), t2.backward(s2).unwrap());
}

/// Two-layer network `y(t)`, loss `mean((dy/dt - r)^2)`.
fn two_layer(params: &[Array2<f64>]) -> (Tape, Var) {
    let t = array![[0.1], [0.4], [0.9], [1.3], [2.0], [2.2]];
    let target = array![[0.3, -0.1], [0.2, 0.0], [0.5, 0.4], [-0.2, 0.1], [0.0, 0.3], [0.1, 0.1]];
    let mut tape = Tape::new();
    let w1 = tape.parameter(params[0].clone());
    let b1 = tape.parameter(params[1].clone());
    let w2 = tape.parameter(params[2].clone());
    let b2 = tape.parameter(params[3].clone());
    let x = tape.constant_with_tangent(t, Array2::ones((6, 1)));
    let z = tape.linear(x, w1, b1);
    let h = tape.gelu(z);
    let y = tape.linear(h, w2, b2);
    let dy = tape.tangent_of(y);
    let r = tape.constant(target);
    let res = tape.sub(dy, r);
    let loss = tape.weighted_square_mean(res, &[1.0, 1.0], &[true; 6]);
    (tape, loss)
}

#[test]
fn two_layer_residual_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = vec![
        random(&mut rng, (8, 1), 1.5),
        random(&mut rng, (1, 8), 0.5),
        random(&mut rng, (2, 8), 1.0),
        random(&mut rng, (1, 2), 0.5),
    ];
    check_gradient(&params, &two_layer, 1e-5);
}

#[test]
fn zero_tangent_matches_plain_reverse_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, xv) = (random(&mut rng, (3, 2), 1.0), random(&mut rng, (4, 2), 1.0));
    let run = |with_tangent: bool| {
        let mut tape = Tape::new();
        let wv = tape.parameter(w.clone());
        let b = tape.constant(Array2::zeros((1, 3)));
        let x = if with_tangent {
            tape.constant_with_tangent(xv.clone(), Array2::zeros((4, 2)))
        } else {
            tape.constant(xv.clone())
        };
        let z = tape.linear(x, wv, b);
        let h = tape.gelu(z);
        let l = tape.weighted_square_mean(h, &[1.0, 2.0, 3.0], &[true; 4]);
        tape.backward(l).unwrap()
    };
    assert_eq!(run(true).flatten(), run(false).flatten());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let params = every_op_params(seed);
        let grad = |ca: f64, cb: f64| {
            let (mut tape, f) = every_op_graph(&params);
            // g = sum of the first weight block squared, a second function
            // of the same parameters (parameter 0 is the first leaf).
            let w1 = Var(0);
            let sq = tape.mul(w1, w1);
            let g = tape.sum(sq);
            let fa = tape.scale(f, ca);
            let gb = tape.scale(g, cb);
            let s = tape.add(fa, gb);
            tape.backward(s).unwrap().flatten()
        };
        let (gf, gg, gab) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(a, b));
        for k in 0..gab.len() {
            let want = a * gf[k] + b * gg[k];
            prop_assert!((gab[k] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn random_probes_match_finite_differences(seed in any::<u64>()) {
        let params = every_op_params(seed);
        check_gradient(&params, &every_op_graph, 1e-5);
    }
}
