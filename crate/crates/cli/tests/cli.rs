use std::path::Path;
use std::process::{Command, Output};

fn pinnsim(args: &[&str]) -> Output {
    pinnsim_env(args, &[])
}

fn pinnsim_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pinnsim"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains three tiny r = 2 networks for the disturbed case.
fn tiny_weights(dir: &Path) {
    let cfg = dir.parent().unwrap().join("tiny.json");
    std::fs::write(&cfg, r#"{"n_data": 40, "n_collocation": 40, "epochs": 2, "hidden": [6]}"#).unwrap();
    for m in ["gen1", "gen2", "gen3"] {
        let out = dir.join(format!("{m}.json"));
        let o = pinnsim(&["train", "--machine", m, "--config", s(&cfg), "--disturbed", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn powerflow_prints_every_bus() {
    let o = pinnsim(&["powerflow"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.starts_with("bus,v_mag,v_angle_deg,p_gen,q_gen"));
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    assert_eq!(code(&pinnsim(&["train", "--machine", "gen9", "--out", s(&out)])), 2);
    assert_eq!(code(&pinnsim(&["powerflow", "--case", "/nonexistent/case.json"])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"epochs": "many"}"#).unwrap();
    assert_eq!(code(&pinnsim(&["train", "--machine", "gen1", "--config", s(&bad), "--out", s(&out)])), 2);
    assert_eq!(code(&pinnsim(&["experiment", "--kind", "nonsense"])), 2);
    assert_eq!(code(&pinnsim_env(&["powerflow"], &[("PINNSIM_THREADS", "zero")])), 2);
    assert_eq!(code(&pinnsim(&["simulate", "--weights-dir", s(dir.path())])), 2);
    assert_eq!(code(&pinnsim(&["simulate", "--method", "euler"])), 2);
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/ieee9.json")).unwrap();
    let mut case: serde_json::Value = serde_json::from_str(&text).unwrap();
    for load in case["loads"].as_array_mut().unwrap() {
        load["p"] = serde_json::json!(load["p"].as_f64().unwrap() * 40.0);
    }
    let path = dir.path().join("overloaded.json");
    std::fs::write(&path, case.to_string()).unwrap();
    let o = pinnsim(&["powerflow", "--case", s(&path)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn trapezoidal_simulation_writes_boundary_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = pinnsim(&["simulate", "--method", "trapezoidal", "--dt", "0.05", "--t-max", "2.5", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2 + 51);
}

#[test]
fn trained_networks_drive_simulation_and_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("weights");
    std::fs::create_dir(&w).unwrap();
    tiny_weights(&w);
    let out = dir.path().join("pinn.csv");
    let diag = dir.path().join("diag.csv");
    let o = pinnsim(&[
        "simulate", "--weights-dir", s(&w), "--dt", "0.1", "--t-max", "0.3", "--out", s(&out), "--diagnostics", s(&diag),
    ]);
    // Barely trained networks may stop early; that is a numerical failure, not a crash.
    assert!([0, 3].contains(&code(&o)), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&diag).unwrap().contains("step,iteration,objective,delta_xi_inf_norm"));
    assert_eq!(code(&pinnsim(&["simulate", "--weights-dir", s(&w), "--dt", "0.5"])), 2);
    let o = pinnsim(&["bench", "--weights-dir", s(&w), "--repeats", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("network forward pass"));

    let cfg = dir.path().join("conv.json");
    std::fs::write(&cfg, format!(r#"{{"kind": "convergence", "weights_dir": "{}", "dt_grid": [0.1, 0.2], "solvers": [{{"r": 2, "s": 3}}]}}"#, s(&w))).unwrap();
    let run = |name: &str| {
        let d = dir.path().join(name);
        let o = pinnsim_env(&["experiment", "--config", s(&cfg), "--out", s(&d)], &[("PINNSIM_THREADS", "1")]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        ["convergence.csv", "convergence_summary.csv"].map(|f| std::fs::read(d.join(f)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}
