use b5kdv::model::{derive_coefficients, PhysicalParameters};
use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn b5kdv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_b5kdv")).current_dir(dir).args(args).output().unwrap()
}

fn json_stdout(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn data_rows(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn derive_coeffs_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json_stdout(&b5kdv(tmp.path(), &["derive-coeffs", "--beta", "1", "--alpha", "1"]));
    let c = derive_coefficients(&PhysicalParameters::canonical(1.0, 1.0), 1.0, 1.0, 1.0).unwrap();
    let k = &v["coefficients"];
    for (name, want) in [("a", c.a), ("b", c.b), ("a2", c.a2), ("a4", c.a4)] {
        assert_eq!(k[name].as_f64().unwrap(), want, "{name}");
    }
    assert_eq!(v["provenance"]["version"].as_str().unwrap().split(' ').next(), Some(env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("p.cfg"), "# parameters\nbeta = 2\nalpha = 3\n").unwrap();
    let from_file = json_stdout(&b5kdv(tmp.path(), &["derive-coeffs", "--config", "p.cfg"]));
    let flagged = json_stdout(&b5kdv(tmp.path(), &["derive-coeffs", "--config", "p.cfg", "--beta", "1", "--alpha", "1"]));
    let direct = json_stdout(&b5kdv(tmp.path(), &["derive-coeffs", "--beta", "1", "--alpha", "1"]));
    assert_eq!(flagged["coefficients"], direct["coefficients"]);
    assert_ne!(from_file["coefficients"], direct["coefficients"]);
    assert_eq!(from_file["physical"]["beta"].as_f64(), Some(2.0));
}

#[test]
fn qroots_returns_zero_and_two_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json_stdout(&b5kdv(tmp.path(), &["qroots", "--a", "1", "--b", "1", "--r", "0"]));
    let roots = v["roots"].as_array().unwrap();
    assert_eq!(roots.len(), 5);
    assert_eq!(roots[0], serde_json::json!([0.0, 0.0]));
    assert_eq!(v["one_real_two_pairs"], Value::Bool(true));
    for z in &roots[1..] {
        let (re, im) = (z[0].as_f64().unwrap(), z[1].as_f64().unwrap());
        assert!((re.abs() - 0.5).abs() < 1e-12 && (im.abs() - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }
}

#[test]
fn simulate_example_decays_and_writes_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "simulate", "--mode", "linear", "--bc", "dissipative", "--L", "1", "--N", "128", "--dt", "1e-3", "--T", "50", "--ic",
        "random", "--seed", "7", "--out", "run",
    ];
    let o = b5kdv(tmp.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&tmp.path().join("run/summary.json"));
    assert!(s["fit"]["mu0"].as_f64().unwrap() > 0.0);
    assert!(s["fit"]["r2"].as_f64().unwrap() > 0.99);
    let energy = fs::read_to_string(tmp.path().join("run/energy.csv")).unwrap();
    assert!(energy.starts_with("# command: "));
    assert!(energy.contains("# version: b5kdv "));
    assert!(energy.contains("# seed = 7"));
    assert!(tmp.path().join("run/final.ckpt").exists());
}

#[test]
fn identical_invocations_are_bitwise_identical() {
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["simulate", "--N", "64", "--T", "0.2", "--seed", "11", "--stride", "50", "--out", "o"];
    for t in [&t1, &t2] {
        assert!(b5kdv(t.path(), &args).status.success());
    }
    for f in ["summary.json", "energy.csv", "snapshots.csv", "final.ckpt"] {
        assert_eq!(fs::read(t1.path().join("o").join(f)).unwrap(), fs::read(t2.path().join("o").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn checkpoint_restarts_from_the_same_state() {
    let tmp = tempfile::tempdir().unwrap();
    let first = b5kdv(tmp.path(), &["simulate", "--N", "64", "--T", "0.1", "--out", "a"]);
    assert!(first.status.success());
    let second = b5kdv(tmp.path(), &["simulate", "--N", "64", "--T", "0", "--ic", "file", "--ic-file", "a/final.ckpt", "--out", "b"]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    let (a, b) = (data_rows(&tmp.path().join("a/snapshots.csv")), data_rows(&tmp.path().join("b/snapshots.csv")));
    let strip_t = |rows: &[String]| rows[1..].iter().map(|r| r.split_once(',').unwrap().1.to_string()).collect::<Vec<_>>();
    let n = 65;
    assert_eq!(strip_t(&a)[a.len() - 1 - n..], strip_t(&b)[..]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| b5kdv(tmp.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["qroots", "--a", "1", "--b", "0.1"]), 1);
    assert_eq!(code(&["simulate", "--no-such-flag"]), 1);
    assert_eq!(code(&["simulate", "--N", "8"]), 1);
    assert_eq!(code(&["simulate", "--mode", "conservative", "--bc", "dissipative"]), 1);
    assert_eq!(code(&["simulate", "--ic", "file"]), 1);
    assert_eq!(code(&["simulate", "--ic-file", "x.csv"]), 1);
    assert_eq!(code(&["decay-fit", "--input", "missing.csv"]), 2);
    let blowup = ["simulate", "--mode", "nonlinear", "--ic", "sine-packet", "--amplitude", "0.1", "--N", "64"];
    let o = b5kdv(tmp.path(), &blowup);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blow-up"));
}

#[test]
fn bad_config_reports_the_offending_token() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.cfg"), "beta = 1\ngamma = 2\n").unwrap();
    let o = b5kdv(tmp.path(), &["derive-coeffs", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("gamma"), "{err}");
}

#[test]
fn mobius_scan_is_independent_of_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    for (jobs, out) in [("1", "s1"), ("4", "s4")] {
        let o = b5kdv(tmp.path(), &["mobius-scan", "--a", "-0.03", "--b", "0.0012", "--r", "0.5", "--count", "2000", "--jobs", jobs, "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (data_rows(&tmp.path().join("s1/mismatch.csv")), data_rows(&tmp.path().join("s4/mismatch.csv")));
    assert_eq!(a.len(), 2001);
    assert_eq!(a, b);
    let v = read_json(&tmp.path().join("s4/mobius_scan.json"));
    assert_eq!(v["feasible_count"].as_u64(), Some(0));
    assert!(v["min_mismatch"].as_f64().unwrap() > 1e-6);
}

#[test]
fn convergence_orders_and_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json_stdout(&b5kdv(tmp.path(), &["convergence", "--jobs", "3", "--dt", "1e-3"]));
    for o in v["orders"]["dissipation_residual"].as_array().unwrap() {
        assert!(o.as_f64().unwrap() >= 1.0, "{o}");
    }
    let s = json_stdout(&b5kdv(tmp.path(), &["spectrum", "--N", "48"]));
    assert!(s["spectral_abscissa"].as_f64().unwrap() < 0.0);
    assert_eq!(s["eigenvalues"].as_array().unwrap().len(), 2 * 47);
}

#[test]
fn identities_and_decay_fit_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json_stdout(&b5kdv(tmp.path(), &["identities", "--T", "2", "--ic", "sine-packet"]));
    assert!(v["decay_chain"]["holds"].as_bool().unwrap());
    assert!(v["max_step_energy_increase"].as_f64().unwrap() <= 1e-8);
    assert!(b5kdv(tmp.path(), &["simulate", "--T", "1.5", "--out", "r"]).status.success());
    let f = json_stdout(&b5kdv(tmp.path(), &["decay-fit", "--input", "r/energy.csv"]));
    let s = read_json(&tmp.path().join("r/summary.json"));
    assert_eq!(f["fit"]["mu0"], s["fit"]["mu0"]);
    let w = json_stdout(&b5kdv(tmp.path(), &["decay-fit", "--input", "r/energy.csv", "--window", "0.5,1.0"]));
    assert_eq!(w["fit"]["window"], serde_json::json!([0.5, 1.0]));
}
