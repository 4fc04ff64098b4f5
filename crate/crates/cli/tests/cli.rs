use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use struchmirls::io::{read_generator, write_generator, write_mask};
use struchmirls::spectral::{random_instance, random_mask, synth_signal};
use struchmirls::{irls_solve, HankelShape, LambdaMode, LineSpectrum, SamplingOperator, SolverConfig, C64};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_struchmirls"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_signal(dir: &TempDir, name: &str, z: &[C64]) -> PathBuf {
    let path = dir.path().join(name);
    write_generator(fs::File::create(&path).unwrap(), z, None).unwrap();
    path
}

fn two_tone(n: usize) -> Vec<C64> {
    synth_signal(&LineSpectrum::new(vec![0.35, 0.40], vec![C64::new(1.0, 0.0); 2]).unwrap(), n)
}

fn read_out(path: &Path) -> Vec<C64> {
    read_generator(fs::File::open(path).unwrap()).unwrap()
}

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn last_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().last().unwrap().to_string()
}

fn freqs_of(path: &Path) -> (String, Vec<f64>) {
    let line = last_line(path);
    let mut parts = line.split(',');
    let method = parts.next().unwrap().to_string();
    (method, parts.map(|s| s.parse().unwrap()).collect())
}

fn success(out: &Output) {
    assert!(out.status.success(), "status {:?}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

#[test]
fn complete_with_full_mask_returns_input() {
    let dir = TempDir::new().unwrap();
    let z = two_tone(33);
    let sig = write_signal(&dir, "x.csv", &z);
    let mask = dir.path().join("mask.txt");
    write_mask(fs::File::create(&mask).unwrap(), &(0..33).collect::<Vec<_>>()).unwrap();
    let out = dir.path().join("z.csv");
    success(&run(&["complete", p(&sig), "--mask", p(&mask), "--rank", "2", "--out", p(&out)]));
    let zh = read_out(&out);
    assert_eq!(zh, z);
    assert!(dir.path().join("z.report.csv").exists());
}

fn sampled_instance(m: usize, seed: u64) -> (Vec<C64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, x) = random_instance(5, 127, &mut rng).unwrap();
    let phi = random_mask(127, m, &mut rng).unwrap();
    (x, phi.indices().to_vec())
}

fn complete_via_cli(dir: &TempDir, x: &[C64], mask_idx: &[usize]) -> (Vec<C64>, String) {
    let sig = write_signal(dir, "x.csv", x);
    let mask = dir.path().join("mask.txt");
    write_mask(fs::File::create(&mask).unwrap(), mask_idx).unwrap();
    let out = dir.path().join("z.csv");
    success(&run(&["complete", p(&sig), "--mask", p(&mask), "--rank", "5", "--seed", "1", "--out", p(&out)]));
    (read_out(&out), fs::read_to_string(dir.path().join("z.report.csv")).unwrap())
}

#[test]
fn complete_matches_library_solve() {
    let dir = TempDir::new().unwrap();
    let (x, idx) = sampled_instance(25, 7);
    let (zh, report) = complete_via_cli(&dir, &x, &idx);
    assert!(report.starts_with("# struchmirls v"));
    assert!(report.contains("seed=1\niter,objective,eps,change\n1,"));

    let phi = SamplingOperator::new(127, idx).unwrap();
    let mut config = SolverConfig::new(5, LambdaMode::ExactConstraint);
    config.seed = 1;
    let direct = irls_solve(&phi, &phi.apply(&x).unwrap(), &HankelShape::new(127, None).unwrap(), &config).unwrap();
    assert_eq!(zh, direct.z_hat);
    assert_eq!(report.lines().count(), direct.outer_iters + 2);
}

#[test]
fn complete_recovers_well_sampled_instance() {
    let dir = TempDir::new().unwrap();
    let (x, idx) = sampled_instance(60, 7);
    let (zh, _) = complete_via_cli(&dir, &x, &idx);
    let err = rel_err(&zh, &x);
    assert!(err < 1e-3, "relative error {err:e}");
}

#[test]
fn malformed_inputs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "index,re,im\n0,1.0\n").unwrap();
    let out = run(&["denoise", p(&bad), "--rank", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let sig = write_signal(&dir, "x.csv", &two_tone(16));
    let mask = dir.path().join("mask.txt");
    fs::write(&mask, "0\n16\n").unwrap();
    assert_eq!(run(&["complete", p(&sig), "--mask", p(&mask), "--rank", "1"]).status.code(), Some(2));
    assert_eq!(run(&["denoise", p(&sig)]).status.code(), Some(2));
    assert_eq!(run(&["denoise", p(&sig), "--rank", "1", "--n", "17"]).status.code(), Some(2));
    assert_eq!(run(&["denoise", p(&sig), "--rank", "1", "--lambda", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["denoise", p(&dir.path().join("missing.csv")), "--rank", "1"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn denoise_keeps_exact_low_rank_input() {
    let dir = TempDir::new().unwrap();
    let z = two_tone(64);
    let sig = write_signal(&dir, "x.csv", &z);
    let out = dir.path().join("z.csv");
    success(&run(&["denoise", p(&sig), "--rank", "2", "--lambda", "adaptive", "--out", p(&out)]));
    let err = rel_err(&read_out(&out), &z);
    assert!(err < 1e-6, "relative error {err:e}");
}

#[test]
fn denoise_with_tiny_lambda_keeps_input() {
    let dir = TempDir::new().unwrap();
    let mut z = two_tone(40);
    z[3] += C64::new(0.3, -0.2);
    let sig = write_signal(&dir, "x.csv", &z);
    let out = dir.path().join("z.csv");
    success(&run(&["denoise", p(&sig), "--rank", "2", "--lambda", "1e-12", "--out", p(&out)]));
    let err = rel_err(&read_out(&out), &z);
    assert!(err < 1e-6, "relative error {err:e}");
}

#[test]
fn estimate_noiseless_two_tone() {
    let dir = TempDir::new().unwrap();
    let sig = write_signal(&dir, "x.csv", &two_tone(64));
    for (method, label) in [("struchmirls", "struchmirls+esprit"), ("vanilla-esprit", "vanilla-esprit"), ("prony", "prony")] {
        let out = dir.path().join(format!("{method}.csv"));
        success(&run(&["estimate", p(&sig), "--rank", "2", "--method", method, "--out", p(&out)]));
        let (got, f) = freqs_of(&out);
        assert_eq!(got, label);
        assert!((f[0] - 0.35).abs() < 1e-8 && (f[1] - 0.40).abs() < 1e-8, "{method}: {f:?}");
    }
}

#[test]
fn estimate_from_samples() {
    let dir = TempDir::new().unwrap();
    let sig = write_signal(&dir, "x.csv", &two_tone(64));
    let mask = dir.path().join("mask.txt");
    write_mask(fs::File::create(&mask).unwrap(), &(0..64).step_by(2).chain([1, 7, 33]).collect::<Vec<_>>()).unwrap();
    let out = dir.path().join("f.csv");
    success(&run(&["estimate", p(&sig), "--rank", "2", "--mask", p(&mask), "--out", p(&out)]));
    let (_, f) = freqs_of(&out);
    assert!((f[0] - 0.35).abs() < 1e-8 && (f[1] - 0.40).abs() < 1e-8, "{f:?}");
    let baseline = run(&["estimate", p(&sig), "--rank", "2", "--mask", p(&mask), "--method", "prony"]);
    assert_eq!(baseline.status.code(), Some(2));
}

#[test]
fn estimate_rejects_rank_above_bound() {
    let dir = TempDir::new().unwrap();
    let sig = write_signal(&dir, "x.csv", &two_tone(16));
    // d1 = 9, so r = 8 is the largest admissible order
    let out = run(&["estimate", p(&sig), "--rank", "9", "--method", "vanilla-esprit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let sig = write_signal(&dir, "x.csv", &two_tone(64));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# estimate settings\nrank = 1\n").unwrap();
    let out = dir.path().join("f.csv");
    success(&run(&["estimate", p(&sig), "--config", p(&cfg), "--method", "prony", "--out", p(&out)]));
    assert_eq!(freqs_of(&out).1.len(), 1);
    success(&run(&["estimate", p(&sig), "--config", p(&cfg), "--rank", "2", "--method", "prony", "--out", p(&out)]));
    assert_eq!(freqs_of(&out).1.len(), 2);

    fs::write(&cfg, "rank = 2\nbogus = 1\n").unwrap();
    let bad = run(&["estimate", p(&sig), "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));
}

fn csv_body(out: &Output) -> String {
    success(out);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let (head, body) = text.split_once('\n').unwrap();
    assert!(head.starts_with("# struchmirls v"), "{head}");
    body.to_string()
}

#[test]
fn phase_transition_is_deterministic_across_workers() {
    let args = ["experiment", "phase-transition", "--n", "31", "--r-values", "1,2", "--m-values", "6,31", "--trials", "4", "--seed", "5"];
    let one = csv_body(&run(&[&args[..], &["--workers", "1"]].concat()));
    let four = csv_body(&run(&[&args[..], &["--workers", "4"]].concat()));
    assert_eq!(one, four);
    let lines: Vec<&str> = one.lines().collect();
    assert_eq!(lines[0], "m,r,success_rate");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("31,1,1.0"));
    assert!(lines[4].starts_with("31,2,1.0"));
}

#[test]
fn snr_sweep_writes_paired_rows() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("snr.csv");
    let args = ["experiment", "snr-sweep", "--snr-values", "-5,inf", "--trials", "3", "--seed", "2", "--workers", "2"];
    success(&run(&[&args[..], &["--out", p(&out)]].concat()));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], format!("# struchmirls v{}, seed=2", env!("CARGO_PKG_VERSION")));
    assert_eq!(lines[1], "snr_db,method,mean_freq_mse");
    assert_eq!(lines.len(), 8);
    for line in &lines[5..] {
        let mse: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(line.starts_with("inf,") && mse < 1e-12, "{line}");
    }
    let again = run(&args);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}
