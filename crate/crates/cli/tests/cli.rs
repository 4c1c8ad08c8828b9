//! End-to-end runs of the `kpinn` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ini::Ini;
use kinetic_pinn::pinn::{read_checkpoint, xavier_init};
use sha2::{Digest, Sha256};

fn kpinn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpinn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kpinn(dir, args);
    assert!(
        out.status.success(),
        "kpinn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Data rows of a CSV as numbers (comment lines and header skipped).
fn numeric_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// Independent digest check of every file listed in a manifest.
fn assert_manifest_verifies(dir: &Path) {
    let ini = Ini::load_from_file(dir.join("manifest.ini")).unwrap();
    let files = ini.section(Some("files")).expect("files section");
    assert!(files.len() >= 2);
    for (name, digest) in files.iter() {
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), digest, "{name}");
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn simulate_rober_bdf() {
    let d = tmp();
    ok(d.path(), &["simulate", "--mechanism", "builtin:rober", "--method", "bdf", "--output", "o"]);
    let (header, rows) = numeric_rows(&d.path().join("o/trajectory.csv"));
    assert_eq!(header, ["t", "A", "B", "C"]);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows.last().unwrap()[0], 1e5);
    for r in &rows {
        assert!((r[1] + r[2] + r[3] - 1.0).abs() <= 1e-6);
    }
    let text = fs::read_to_string(d.path().join("o/trajectory.csv")).unwrap();
    assert!(text.contains("# accepted_steps="));
    assert_manifest_verifies(&d.path().join("o"));
}

#[test]
fn simulate_without_reactions_is_constant() {
    let d = tmp();
    fs::write(d.path().join("still.mech"), "SPECIES: A B\nINIT: 1 2\nTSPAN: 0 10\n").unwrap();
    ok(d.path(), &["simulate", "--mechanism", "still.mech", "--output", "o", "--solver.grid=linear"]);
    let (_, rows) = numeric_rows(&d.path().join("o/trajectory.csv"));
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r[1] == 1.0 && r[2] == 2.0));
}

#[test]
fn reduced_dopri5_tracks_full_bdf() {
    let d = tmp();
    ok(d.path(), &["simulate", "--output", "full"]);
    ok(
        d.path(),
        &["simulate", "--output", "red", "--method", "dopri5", "--solver.reduced=true"],
    );
    let (hf, full) = numeric_rows(&d.path().join("full/trajectory.csv"));
    let (hr, red) = numeric_rows(&d.path().join("red/trajectory.csv"));
    assert_eq!(full.len(), red.len());
    let (a_full, a_red) = (column(&hf, "A"), column(&hr, "A"));
    let mut checked = 0;
    for (f, r) in full.iter().zip(&red) {
        assert_eq!(f[0], r[0]);
        if f[0] >= 1e-2 {
            assert!((r[a_red] - f[a_full]).abs() <= 1e-2 * f[a_full].abs(), "t = {}", f[0]);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn reduced_pollu_starts_past_the_initial_layer() {
    let d = tmp();
    let grid = ["--mechanism", "builtin:pollu", "--solver.grid=linear", "--solver.points=31"];
    ok(d.path(), &[&["simulate", "--output", "full"][..], &grid].concat());
    let out = ok(
        d.path(),
        &[&["simulate", "--output", "red", "--method", "dopri5", "--solver.reduced=true"][..], &grid].concat(),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("no QSS closure at the initial state"));
    let (hf, full) = numeric_rows(&d.path().join("full/trajectory.csv"));
    let (hr, red) = numeric_rows(&d.path().join("red/trajectory.csv"));
    assert_eq!(full.len(), 31);
    assert_eq!(full.len(), red.len());
    // Row 0 comes from the full system; later rows from the reduced one.
    assert_eq!(full[0], red[0]);
    for name in ["NO2", "NO", "O3", "HCHO"] {
        let (jf, jr) = (column(&hf, name), column(&hr, name));
        let peak = full.iter().fold(0.0f64, |a, r| a.max(r[jf]));
        for (f, r) in full.iter().zip(&red) {
            assert_eq!(f[0], r[0]);
            assert!((r[jr] - f[jf]).abs() <= 0.05 * peak, "{name} at t = {}", f[0]);
        }
    }
}

#[test]
fn reduce_rober_selects_b() {
    let d = tmp();
    let out = ok(d.path(), &["reduce", "--output", "o"]);
    assert_eq!(fs::read_to_string(d.path().join("o/partition.txt")).unwrap().trim(), "QSS: B");
    assert!(String::from_utf8_lossy(&out.stdout).contains("QSS: B"));
    let (header, rows) = numeric_rows(&d.path().join("o/closure_selftest.csv"));
    let conv = column(&header, "converged");
    assert!(rows.iter().all(|r| r[conv] == 1.0));
    assert_manifest_verifies(&d.path().join("o"));
}

#[test]
fn reduce_pollu_partition_matches_maxima() {
    let d = tmp();
    ok(d.path(), &["reduce", "--mechanism", "builtin:pollu", "--output", "o"]);
    let line = fs::read_to_string(d.path().join("o/partition.txt")).unwrap();
    let names: Vec<&str> = line.trim().strip_prefix("QSS:").unwrap().split_whitespace().collect();
    let text = fs::read_to_string(d.path().join("o/maxima.csv")).unwrap();
    let mut expected = Vec::new();
    for l in text.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        let max: f64 = f[1].parse().unwrap();
        assert_eq!(f[2] == "1", max < 1e-4, "{l}");
        if max < 1e-4 {
            expected.push(f[0]);
        }
    }
    assert_eq!(names, expected);
    assert!(!names.is_empty());
}

#[test]
fn reduce_rejects_empty_qss_set() {
    let d = tmp();
    let out = kpinn(d.path(), &["reduce", "--threshold", "1e-300", "--output", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty QSS set"));
}

#[test]
fn zero_updates_checkpoint_is_initialisation() {
    let d = tmp();
    ok(d.path(), &["train", "--max-updates", "0", "--output", "o"]);
    let text = fs::read_to_string(d.path().join("o/checkpoint.txt")).unwrap();
    assert!(text.lines().any(|l| l == "widths=1,128,128,128,2"));
    let pinn = read_checkpoint(text.as_bytes()).unwrap();
    assert_eq!(pinn.species, ["A", "C"]);
    assert_eq!(pinn.model.params(), xavier_init(&[1, 128, 128, 128, 2], 0).as_slice());
    assert_manifest_verifies(&d.path().join("o"));
}

fn short_train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train",
        "--max-updates",
        "40",
        "--network.widths=8,8",
        "--training.record_every=10",
        "--output",
        out,
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(out)
}

#[test]
fn training_is_reproducible() {
    let d = tmp();
    let a = short_train(d.path(), "a", &[]);
    let b = short_train(d.path(), "b", &[]);
    assert_eq!(fs::read(a.join("checkpoint.txt")).unwrap(), fs::read(b.join("checkpoint.txt")).unwrap());
    let (ha, ra) = numeric_rows(&a.join("loss_history.csv"));
    let (hb, rb) = numeric_rows(&b.join("loss_history.csv"));
    assert_eq!(ha, ["step", "total_loss", "A", "C", "wall_time"]);
    assert_eq!(ha, hb);
    let steps: Vec<f64> = ra.iter().map(|r| r[0]).collect();
    assert_eq!(steps, [0.0, 10.0, 20.0, 30.0]);
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x[..4], y[..4]);
    }
    // Re-running from the config snapshot reproduces the run.
    ok(d.path(), &["train", "--config", "a/config.ini", "--output.directory=c"]);
    assert_eq!(
        fs::read(a.join("checkpoint.txt")).unwrap(),
        fs::read(d.path().join("c/checkpoint.txt")).unwrap()
    );
}

#[test]
fn regular_mode_trains_every_species() {
    let d = tmp();
    let o = short_train(d.path(), "o", &["--mode", "regular"]);
    let pinn = read_checkpoint(fs::read_to_string(o.join("checkpoint.txt")).unwrap().as_bytes()).unwrap();
    assert_eq!(pinn.species, ["A", "B", "C"]);
}

#[test]
fn divergence_exits_with_numeric_code() {
    let d = tmp();
    let out = kpinn(
        d.path(),
        &[
            "train",
            "--mode",
            "regular",
            "--max-updates",
            "5",
            "--network.widths=4",
            "--training.y_ref_scale=1e300,1e300,1e300",
            "--output",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_reference_replay_is_exact() {
    let d = tmp();
    ok(d.path(), &["simulate", "--output", "ref", "--solver.points=400"]);
    ok(
        d.path(),
        &[
            "evaluate",
            "--checkpoint",
            "ref/trajectory.csv",
            "--reference",
            "ref/trajectory.csv",
            "--points",
            "37",
            "--output",
            "o",
        ],
    );
    let text = fs::read_to_string(d.path().join("o/rmse.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let v: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.0, "{r}");
    }
    let (_, pred) = numeric_rows(&d.path().join("o/predictions.csv"));
    assert_eq!(pred.len(), 37);
}

#[test]
fn evaluate_network_with_closure() {
    let d = tmp();
    let o = short_train(d.path(), "t", &[]);
    let ckpt = o.join("checkpoint.txt");
    ok(
        d.path(),
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--points", "25", "--evaluate.qss=true", "--output", "e"],
    );
    let text = fs::read_to_string(d.path().join("e/rmse.csv")).unwrap();
    assert!(text.contains("A,") && text.contains("C,") && text.contains(",closure"));
    let (header, pred) = numeric_rows(&d.path().join("e/predictions.csv"));
    assert_eq!(header, ["t", "A", "C", "B"]);
    assert_eq!(pred.len(), 25);
}

#[test]
fn evaluate_species_mismatch_is_config_error() {
    let d = tmp();
    let o = short_train(d.path(), "t", &[]);
    let ckpt = o.join("checkpoint.txt");
    let out = kpinn(
        d.path(),
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--evaluate.species=Z", "--output", "e"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_default_grid_has_five_rows() {
    let d = tmp();
    ok(
        d.path(),
        &["sweep", "--max-updates", "1", "--training.n_collocation=64", "--training.batch_size=32", "--evaluate.points=20", "--output", "o"],
    );
    let text = fs::read_to_string(d.path().join("o/sweep.csv")).unwrap();
    let archs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(archs, ["64x4", "64x5", "128x2", "128x3", "256x1"]);
    let runs = fs::read_to_string(d.path().join("o/sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 15);
    assert_manifest_verifies(&d.path().join("o"));
}

#[test]
fn sweep_with_invalid_training_config_fails_up_front() {
    let d = tmp();
    let out = kpinn(d.path(), &["sweep", "--training.n_collocation=64", "--output", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_single_cell() {
    let d = tmp();
    ok(
        d.path(),
        &["sweep", "--max-updates", "2", "--sweep.architectures=8x2", "--sweep.seeds=1", "--evaluate.points=20", "--output", "o"],
    );
    let text = fs::read_to_string(d.path().join("o/sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("8x2,1,"));
}

#[test]
fn sweep_failures_exit_four_and_are_recorded() {
    let d = tmp();
    let out = kpinn(
        d.path(),
        &[
            "sweep",
            "--max-updates",
            "2",
            "--sweep.architectures=8x1",
            "--sweep.seeds=2",
            "--training.weights=1,2,3",
            "--evaluate.points=20",
            "--output",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    let runs = fs::read_to_string(d.path().join("o/sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().filter(|l| l.contains("failed")).count(), 2);
    assert_manifest_verifies(&d.path().join("o"));
}

#[test]
fn stiffness_report_for_rober() {
    let d = tmp();
    ok(d.path(), &["stiffness", "--output", "o", "--solver.rtol=1e-6"]);
    let (header, rows) = numeric_rows(&d.path().join("o/stiffness.csv"));
    // Triangular Jacobian at the initial state: eigenvalues -0.04, 0, 0.
    let first = &rows[0];
    assert_eq!(first[0], 0.0);
    let re: Vec<f64> = (0..3).map(|k| first[column(&header, &format!("re_{k}"))]).collect();
    assert!((re[0] + 0.04).abs() < 1e-12 && re[1].abs() < 1e-12 && re[2].abs() < 1e-12, "{re:?}");
    let ratio = column(&header, "stiffness_ratio");
    for r in rows.iter().filter(|r| r[0] >= 1.0) {
        assert!(r[ratio] >= 1000.0, "t = {}", r[0]);
    }
    let text = fs::read_to_string(d.path().join("o/step_counts.csv")).unwrap();
    let steps: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(steps[1] >= 100.0 * steps[0], "{steps:?}");
}

#[test]
fn stiffness_ratio_of_linear_decay_is_one() {
    let d = tmp();
    fs::write(d.path().join("decay.mech"), "SPECIES: A\nINIT: 1\nTSPAN: 0 1\nA -> : 1\n").unwrap();
    ok(d.path(), &["stiffness", "--mechanism", "decay.mech", "--output", "o", "--solver.compare_end=1"]);
    let (header, rows) = numeric_rows(&d.path().join("o/stiffness.csv"));
    let ratio = column(&header, "stiffness_ratio");
    assert!(rows.iter().all(|r| r[ratio] == 1.0));
}

#[test]
fn plot_single_series() {
    let d = tmp();
    fs::write(d.path().join("xy.csv"), "x,y\n0,1\n1,2\n2,0.5\n").unwrap();
    ok(d.path(), &["plot", "--input", "xy.csv", "--output", "o"]);
    let svg = fs::read_to_string(d.path().join("o/plot.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(!svg.contains("<image"));
}

#[test]
fn plot_log_x_drops_initial_row_with_warning() {
    let d = tmp();
    ok(d.path(), &["simulate", "--output", "s"]);
    let out = ok(d.path(), &["plot", "--input", "s/trajectory.csv", "--logx", "--output", "o"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let svg = fs::read_to_string(d.path().join("o/plot.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn plot_overlay_has_two_polylines_per_species() {
    let d = tmp();
    ok(d.path(), &["simulate", "--output", "s"]);
    ok(d.path(), &["simulate", "--output", "r", "--solver.reduced=true"]);
    ok(
        d.path(),
        &["plot", "--input", "s/trajectory.csv,r/trajectory.csv", "--logx", "--output", "o"],
    );
    let svg = fs::read_to_string(d.path().join("o/plot.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 6);
}

#[test]
fn malformed_plot_input_is_rejected() {
    let d = tmp();
    fs::write(d.path().join("bad.csv"), "x,y\n0,abc\n").unwrap();
    let out = kpinn(d.path(), &["plot", "--input", "bad.csv", "--output", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_two() {
    let d = tmp();
    assert_eq!(kpinn(d.path(), &["simulate", "--solver.rtl=1"]).status.code(), Some(2));
    assert_eq!(kpinn(d.path(), &["simulate", "--solver.method"]).status.code(), Some(2));
    assert_eq!(kpinn(d.path(), &["simulate", "--mechanism", "missing.mech"]).status.code(), Some(2));
    assert_eq!(kpinn(d.path(), &["simulate", "--config", "missing.ini"]).status.code(), Some(2));
    assert_eq!(kpinn(d.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn config_file_and_overrides_combine() {
    let d = tmp();
    fs::write(d.path().join("run.ini"), "[solver]\npoints = 11\ngrid = linear\n[output]\ndirectory = x\n").unwrap();
    ok(d.path(), &["simulate", "--config", "run.ini", "--solver.points=7"]);
    let (_, rows) = numeric_rows(&d.path().join("x/trajectory.csv"));
    assert_eq!(rows.len(), 7);
    let snapshot = fs::read_to_string(d.path().join("x/config.ini")).unwrap();
    assert!(snapshot.contains("points=7") || snapshot.contains("points = 7"));
}
