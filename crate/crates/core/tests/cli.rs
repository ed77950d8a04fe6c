use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn varlap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varlap")).args(args).env_remove("VARLAP_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn kv(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}="))).map(String::from)
}

fn write_linear_data(path: &Path, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let lines: Vec<String> =
        (0..n).map(|_| format!("{}", 6.0 + 1f64.exp() * rng.sample::<f64, _>(StandardNormal))).collect();
    fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn fit_linear_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("y.txt");
    write_linear_data(&data, 1000);
    let cfg = dir.path().join("fit.cfg");
    fs::write(&cfg, "model=linear\na=3\nm_theta=1\ns_theta=1\nm_lambda=1\ns_lambda=1\n").unwrap();
    let out = varlap(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--override", "tol=1e-6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);
    let text = fs::read_to_string(dir.path().join("y.txt.fit")).unwrap();
    for k in ["mu_theta", "sigma_theta", "mu_lambda", "sigma_lambda", "residual_theta", "remainder_scaled_norm", "sweeps"] {
        assert!(kv(&text, k).is_some(), "missing {k}");
    }
    assert_eq!(kv(&text, "converged").as_deref(), Some("true"));
    assert_eq!(kv(&text, "tol").as_deref(), Some("0.000001"));
    let mu: f64 = kv(&text, "mu_theta").unwrap().parse().unwrap();
    assert!((mu - 2.0).abs() < 0.1);
}

#[test]
fn fit_single_parameter_and_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("y.txt");
    fs::write(&data, "2.9\n2.5\n2.8\n# comment\n\n2.6\n").unwrap();
    let cfg = dir.path().join("fit.cfg");
    let out_path = dir.path().join("res.txt");
    fs::write(&cfg, format!("model=exp\nm_theta=0\ns_theta=3\nnoise_sd=0.5\noutput={}\n", out_path.display())).unwrap();
    let ok = varlap(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let text = fs::read_to_string(&out_path).unwrap();
    assert_eq!(kv(&text, "n").as_deref(), Some("4"));
    let capped = varlap(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--override", "max_sweeps=1"]);
    assert_eq!(code(&capped), 3);
    let partial = fs::read_to_string(&out_path).unwrap();
    assert_eq!(kv(&partial, "converged").as_deref(), Some("false"));
    assert!(kv(&partial, "mu_theta").is_some());
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let cfg = dir.path().join("fit.cfg");
    fs::write(&cfg, "model=linear\na=3\n").unwrap();
    assert_eq!(code(&varlap(&["fit", "--config", cfg.to_str().unwrap(), "--data", empty.to_str().unwrap()])), 2);
    let missing = dir.path().join("nope.txt");
    assert_eq!(code(&varlap(&["fit", "--config", cfg.to_str().unwrap(), "--data", missing.to_str().unwrap()])), 2);
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "experiment=wobble\n").unwrap();
    assert_eq!(code(&varlap(&["simulate", "--config", bad.to_str().unwrap()])), 2);
    fs::write(&bad, "experiment=tv-curve\ncolour=blue\n").unwrap();
    assert_eq!(code(&varlap(&["simulate", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&varlap(&["diagnose", "nothing"])), 2);
    assert_eq!(code(&varlap(&["frobnicate"])), 2);
}

#[test]
fn simulate_writes_outputs_and_honours_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("experiment=linear-asymptotics\nn_grid=10,100\nreps=5\noutput_dir={}\n", dir.path().display())).unwrap();
    let out = varlap(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("linear-asymptotics");
    for f in ["raw.csv", "summary.csv", "histograms.csv", "meta.txt"] {
        assert!(base.join(f).exists(), "{f}");
    }
    let first = fs::read(base.join("raw.csv")).unwrap();
    let seeded = Command::new(env!("CARGO_BIN_EXE_varlap"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("VARLAP_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&seeded), 0);
    assert_ne!(fs::read(base.join("raw.csv")).unwrap(), first);
    assert!(fs::read_to_string(base.join("meta.txt")).unwrap().contains("seed=77"));
}

#[test]
fn diagnostics_pass() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("under.txt");
    let o = varlap(&["diagnose", "underdispersion", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(&report).unwrap().contains("violations=0"));
    let o = varlap(&["diagnose", "nonequivalence"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("CERTIFIED").count(), 2);
    assert!(!text.contains("NOT CERTIFIED"));
    let again = varlap(&["diagnose", "nonequivalence"]);
    assert_eq!(o.stdout, again.stdout);
    let o = varlap(&["diagnose", "oracle-gap"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    for line in table.lines().skip(1) {
        let gap: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(gap >= 0.0, "{line}");
    }
}

#[test]
fn selftest_is_green() {
    let o = varlap(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
