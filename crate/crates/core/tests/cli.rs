use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hvm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HVM_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SHORT_POISSON2D: &str = r#"
[model]
family = "poisson2d"
truncation = 30

[prior]
kind = "mixture"
components = 3
covariance = "diagonal"
init_spread = 3.0
init_center = 5.0

[aux]
kind = "inverse-flow"
layers = 2

[optimizer]
learning_rate = 0.01

[run]
iterations = 200
samples = 4
meanfield_restarts = 1
oracle_nodes = 10
"#;

#[test]
fn gradcheck_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = hvm(&["gradcheck"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    assert!(report["battery"]["checks"].as_array().unwrap().len() >= 10);
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn injected_fault_fails_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = hvm(&["gradcheck", "--inject-fault", "flow-theta-vjp"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("flow-theta-vjp"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL flow-theta-vjp"));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&hvm(&["fit", "--config", "/definitely/missing.toml"], &out)), 2);

    let bad_lr = write_config(dir.path(), "lr.toml", "[optimizer]\nlearning_rate = -1.0\n");
    assert_eq!(code(&hvm(&["fit", "--config", bad_lr.to_str().unwrap()], &out)), 2);

    let unknown = write_config(dir.path(), "unknown.toml", "[run]\nitterations = 5\n");
    assert_eq!(code(&hvm(&["fit", "--config", unknown.to_str().unwrap()], &out)), 2);

    let p2d = write_config(dir.path(), "p2d.toml", SHORT_POISSON2D);
    assert_eq!(code(&hvm(&["def-toy", "--config", p2d.to_str().unwrap()], &out)), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_hvm"))
        .args(["gradcheck", "--out"])
        .arg(&out)
        .env("HVM_LOG_LEVEL", "verbose")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&hvm(&["fit", "--no-such-flag"], &out)), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "diverge.toml",
        "[model]\nfamily = \"bernoulli-table\"\ndim = 1\nlog_weights = [0.0, 1.0]\n\n\
         [prior]\nkind = \"mixture\"\ncomponents = 1\n\n[aux]\nkind = \"prior\"\n\n\
         [optimizer]\nlearning_rate = 1e308\n",
    );
    let o = hvm(&["fit", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_artifacts_have_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let o = hvm(&["fit", "--seed", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let summary = read_json(&dir.path().join("summary.json"));
    let lines: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len() as u64, summary["iterations"].as_u64().unwrap());
    for (i, rec) in lines.iter().enumerate() {
        assert_eq!(rec["iter"].as_u64(), Some(i as u64));
        for key in ["elbo_mean", "elbo_se", "grad_norm_theta", "grad_norm_phi"] {
            assert!(rec[key].as_f64().is_some_and(f64::is_finite), "{key}");
        }
        assert!(rec["wall_ms"].is_null());
    }
    assert_eq!(summary["seed"].as_u64(), Some(3));
    let params = read_json(&dir.path().join("params.json"));
    assert!(!params["theta"].as_array().unwrap().is_empty());
}

#[test]
fn printed_default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = hvm(&["fit", "--print-default"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    hvm::config::RunConfig::from_toml(&text).unwrap();
}

#[test]
fn poisson2d_grids_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p2d.toml", SHORT_POISSON2D);
    let out = dir.path().join("out");
    let o = hvm(&["poisson2d", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["posterior", "meanfield", "hvm"] {
        let mut r = csv::Reader::from_path(out.join(format!("{name}.csv"))).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["z1", "z2", "pmf"]);
        let rows: Vec<(f64, f64, f64)> = r.deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 31 * 31);
        assert_eq!((rows[1].0, rows[1].1), (0.0, 1.0));
        let total: f64 = rows.iter().map(|r| r.2).sum();
        assert!((total - 1.0).abs() < 1e-9, "{name}: {total}");
    }
    let report = read_json(&out.join("report.json"));
    for key in ["kl_meanfield", "kl_hvm"] {
        assert!(report[key].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(report["modes_posterior"].as_u64(), Some(3));
}
