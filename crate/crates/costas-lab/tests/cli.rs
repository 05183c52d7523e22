//! End-to-end runs of the `costas-lab` binary.

use anyhow::Result;
use std::path::Path;
use std::process::{Command, Output};

const REF: [&str; 6] = ["--variant", "bpsk", "--f0", "400e3", "--fs", "100e3"];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costas-lab"))
        .args(args)
        .env_remove("COSTAS_LAB_SEED")
        .output()
        .expect("binary runs")
}

fn with_ref<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(&REF);
    v.extend_from_slice(extra);
    v
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[test]
fn design_prints_constants() -> Result<()> {
    let out = bin(&with_ref("design", &[]));
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout)?;
    assert!((v["omega_n"].as_f64().unwrap() / 251_327.4 - 1.0).abs() < 1e-5);
    assert_eq!(v["variant"], "bpsk");
    Ok(())
}

#[test]
fn predict_writes_manifest() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let out_dir = dir.path().to_str().unwrap();
    let out = bin(&with_ref("predict", &["--offsets", "50e3,70e3", "--out", out_dir, "--seed", "7"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.path().join("manifest.json"))?;
    assert_eq!(m["schema"], 1);
    assert_eq!(m["command"], "predict");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["artifacts"][0], "prediction.json");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let p = read_json(&dir.path().join("prediction.json"))?;
    assert_eq!(p["t_p"]["samples"].as_array().unwrap().len(), 2);
    assert_eq!(p["formula_ids"]["t_p"].as_str().unwrap().split(':').next(), Some("pull-in-time"));
    Ok(())
}

#[test]
fn seed_environment_is_overridden_by_flag() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let run = |extra: &[&str]| -> Result<serde_json::Value> {
        let mut args = with_ref("design", &["--out", dir.path().to_str().unwrap()]);
        args.extend_from_slice(extra);
        let out = Command::new(env!("CARGO_BIN_EXE_costas-lab")).args(&args).env("COSTAS_LAB_SEED", "99").output()?;
        assert_eq!(out.status.code(), Some(0));
        read_json(&dir.path().join("manifest.json"))
    };
    assert_eq!(run(&[])?["seed"], 99);
    assert_eq!(run(&["--seed", "3"])?["seed"], 3);
    Ok(())
}

#[test]
fn sweep_keeps_input_order() -> Result<()> {
    let out = bin(&with_ref("sweep", &["--fidelity", "averaged", "--offsets", "100e3,50e3,70e3", "--jobs", "3"]));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout)?;
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta_f0,T_P_theory,T_P_sim,locked");
    let firsts: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(firsts, ["1e5", "5e4", "7e4"]);
    Ok(())
}

#[test]
fn sweep_range_and_signal_fidelity() -> Result<()> {
    let out = bin(&with_ref("sweep", &["--range", "50e3:70e3:20e3", "--seed", "12345"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout)?;
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[3] == "true"));
    Ok(())
}

#[test]
fn simulate_signal_artifacts() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let out = bin(&with_ref("simulate", &["--delta-f0", "40e3", "--duration", "3e-4", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&dir.path().join("summary.json"))?;
    assert_eq!(s["locked"], true);
    assert_eq!(s["ber"], 0.0);
    let csv = std::fs::read_to_string(dir.path().join("timeseries.csv"))?;
    assert!(csv.lines().count() > 100);
    Ok(())
}

#[test]
fn simulate_phase_model() -> Result<()> {
    let out = bin(&with_ref("simulate", &["--fidelity", "phase", "--delta-f0", "10e3", "--duration", "2e-4"]));
    assert_eq!(out.status.code(), Some(0));
    let s: serde_json::Value = serde_json::from_slice(&out.stdout)?;
    assert_eq!(s["locked"], true);
    assert_eq!(s["cycle_slips"], 0);
    Ok(())
}

#[test]
fn portrait_from_config() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("p.json");
    let params = costas_lab::ode_engine::example_semistable::params(0.0);
    let mut pc = costas_lab::ode_engine::example_semistable::portrait_config();
    pc.nx = 2;
    pc.ntheta = 2;
    pc.t_end = 20.0;
    let doc = serde_json::json!({ "variant": "bpsk", "params": params, "filter": "lead-lag", "portrait": pc });
    std::fs::write(&cfg, doc.to_string())?;
    let out = bin(&["portrait", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("portrait.csv"))?;
    assert!(csv.starts_with("t,x,theta_e,class\n"));
    Ok(())
}

#[test]
fn config_errors_exit_2() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"variant": "bpsk", "bogus": 1}"#)?;
    for args in [
        vec!["predict", "--config", bad.to_str().unwrap()],
        vec!["design", "--variant", "8psk", "--f0", "400e3", "--fs", "100e3"],
        vec!["design", "--variant", "bpsk", "--fs", "100e3"],
        with_ref("portrait", &["--fidelity", "signal"]),
        with_ref("sweep", &["--range", "5:1:1"]),
        vec!["nonsense"],
    ] {
        let out = bin(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_costas-lab"))
        .args(with_ref("design", &[]))
        .env("COSTAS_LAB_SEED", "not-a-number")
        .output()?;
    assert_eq!(out.status.code(), Some(2));
    Ok(())
}

#[test]
fn numeric_failure_exits_3() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("stiff.json");
    std::fs::write(
        &cfg,
        r#"{"variant":"bpsk","f0":400000,"fs":100000,"fidelity":"phase","delta_f0":30000,"duration":0.001,
            "integrator":{"method":"RK45-adaptive","h_min":1e-5,"h_max":1e-4,"rtol":1e-12,"atol":1e-14,"t_end":0.001}}"#,
    )?;
    let out = bin(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}
