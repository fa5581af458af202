use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mac-pa");

const SMALL: &str = r#"
name = "small"
users = 2
n_t = 3
n_r = 3
r = [0.5, 0.2]
t = [0.5, 0.2]
rho_db = 3.0
budgets = [1.0, 1.0]
p = 0.5
receive_basis = "project"
mc_draws = 50
seed = 7
sweep_axis = "power"
sweep_values = [0.1, 1.0]
"#;

fn mac_pa(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mac_pa(&args)
}

#[test]
fn invalid_probability_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SMALL.replace("p = 0.5", "p = 1.5"));
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("p"), "{err}");
    assert!(!dir.path().join("out/small.csv").exists());
}

#[test]
fn unknown_fields_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.toml", &format!("{SMALL}\nmc_drawz = 3\n"));
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mc_drawz"));
    let out = run(&dir.path().join("missing.toml"), &dir.path().join("out"), &[]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &["--threads", "1"]).status.success());
    assert!(run(&cfg, &c, &["--seed", "8"]).status.success());
    for file in ["small.csv", "small.diag.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_ne!(fs::read(a.join("small.csv")).unwrap(), fs::read(c.join("small.csv")).unwrap());
    let csv = fs::read_to_string(a.join("small.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    for col in ["x", "p", "rate1", "rate2", "mc_rate1", "sum_rate", "capacity", "sre", "converged"] {
        assert!(header.contains(&col), "{col}");
    }
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("small.diag.json")).unwrap()).unwrap();
    assert_eq!(diag["config"]["seed"], 8);
}

#[test]
fn figure_commands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let expected = [
        ("fig1", "x,rho_db,p,rate1,"),
        ("fig2", "p,capacity,capacity_norm,sum_rate_space_time,"),
        ("fig3", "x,rho_db,p,rate1,"),
    ];
    for (fig, prefix) in expected {
        let status = mac_pa(&[fig, "--out", out]);
        assert!(status.status.success(), "{fig}: {}", String::from_utf8_lossy(&status.stderr));
        let csv = fs::read_to_string(dir.path().join(format!("{fig}.csv"))).unwrap();
        assert!(csv.starts_with(prefix), "{fig}: {}", csv.lines().next().unwrap());
        assert!(dir.path().join(format!("{fig}.diag.json")).exists());
    }
}

#[test]
fn selftest_passes() {
    let out = mac_pa(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
