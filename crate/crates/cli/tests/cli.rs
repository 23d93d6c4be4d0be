use std::path::Path;
use std::process::{Command, Output};

use norm_core::mesh::{load_mesh, unit_square_grid, MeshFormat};

fn norm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_norm"))
        .args(args)
        .current_dir(dir)
        .env_remove("NORM_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = norm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn off_output_feeds_basis_computation() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["mesh", "grid", "--n", "6", "--out", "g.off"]);
    let text = std::fs::read_to_string(dir.path().join("g.off")).unwrap();
    assert!(text.starts_with("OFF\n49 72 0\n"));
    ok(dir.path(), &["lbo", "compute", "--mesh", "g.off", "--modes", "8", "--out", "b.nsb"]);
}

#[test]
fn grid_mesh_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["mesh", "grid", "--n", "16", "--out", "g.json"]);
    let loaded = load_mesh(dir.path().join("g.json"), MeshFormat::MshJson).unwrap();
    let direct = unit_square_grid(16).unwrap();
    assert_eq!(loaded.n_vertices(), 17 * 17);
    assert_eq!(loaded.cells(), direct.cells());
    for (a, b) in loaded.vertices().iter().zip(direct.vertices()) {
        for k in 0..3 {
            assert_eq!(a[k].to_bits(), b[k].to_bits());
        }
    }
}

#[test]
fn mesh_info_json_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["mesh", "notch", "--n", "10", "--out", "n.json"]);
    let text = ok(dir.path(), &["--json", "mesh", "info", "--mesh", "n.json"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["status"], "Ok");
    assert_eq!(v["command"], "mesh info");
    assert_eq!(v["metrics"]["cells"], 2 * 100 - 2 * 4);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["verify", "--suite", "spectra"][..],
        &["frobnicate"][..],
        &["sweep", "--data", "x.nds", "--basis", "b.nsb", "--grid", ""][..],
        &["mesh", "grid"][..],
    ] {
        assert_eq!(norm(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = norm(dir.path(), &["--json", "mesh", "info", "--mesh", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "Failed");
    assert!(v["error"].as_str().unwrap().contains("missing.json"));
}

#[test]
fn verify_tensor_oracle_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--json", "verify", "--suite", "tensor-oracle"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["metrics"]["pass"], true);
    assert!(v["metrics"]["checks"][0]["value"].as_f64().unwrap() <= 1e-13);
}

#[test]
fn vtk_export_cell_types_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("t.off"), "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
    std::fs::write(d.join("f.json"), r#"{"channels": 1, "values": [1.0, 2.0, 3.0]}"#).unwrap();
    ok(d, &["export-vtk", "--mesh", "t.off", "--field", "f.json", "--out", "t.vtk"]);
    let text = std::fs::read_to_string(d.join("t.vtk")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let i = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
    assert_eq!(lines[i + 1], "5");

    std::fs::write(
        d.join("tet.json"),
        r#"{"dim": 3, "cell_kind": "tet", "vertices": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]], "cells": [[0,1,2,3]]}"#,
    )
    .unwrap();
    std::fs::write(d.join("g.json"), r#"{"channels": 1, "values": [0.0, 1.0, 2.0, 3.0]}"#).unwrap();
    ok(d, &["export-vtk", "--mesh", "tet.json", "--field", "g.json", "--out", "tet.vtk"]);
    assert!(std::fs::read_to_string(d.join("tet.vtk")).unwrap().contains("CELL_TYPES 1\n10\n"));

    let out = norm(d, &["export-vtk", "--mesh", "tet.json", "--field", "f.json", "--out", "bad.vtk"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn seeded_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mesh", "grid", "--n", "6", "--out", "g.json"]);
    ok(d, &["lbo", "compute", "--mesh", "g.json", "--modes", "12", "--out", "b.nsb"]);
    for tag in ["a", "b"] {
        let data = format!("h_{tag}.nds");
        let ck = format!("ck_{tag}");
        let rep = format!("m_{tag}.json");
        ok(d, &["data", "gen", "heat", "--mesh", "g.json", "--n", "18", "--t", "0.01", "--seed", "3", "--out", &data]);
        ok(
            d,
            &[
                "train", "--data", &data, "--basis-in", "b.nsb", "--width", "4", "--layers", "2", "--q-hidden", "8",
                "--epochs", "3", "--batch", "4", "--seed", "5", "--out", &ck,
            ],
        );
        ok(d, &["eval", "--ckpt", &ck, "--data", &data, "--report", &rep]);
    }
    for (a, b) in [("h_a.nds", "h_b.nds"), ("ck_a/params.bin", "ck_b/params.bin"), ("m_a.json", "m_b.json")] {
        assert_eq!(std::fs::read(d.join(a)).unwrap(), std::fs::read(d.join(b)).unwrap(), "{a} vs {b}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m_a.json")).unwrap()).unwrap();
    for key in ["rel_l2", "mme", "per_sample", "config"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn gradcheck_and_sweep_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mesh", "grid", "--n", "5", "--out", "g.json"]);
    ok(d, &["lbo", "compute", "--mesh", "g.json", "--modes", "8", "--out", "b.nsb"]);
    ok(d, &["data", "gen", "heat", "--mesh", "g.json", "--n", "12", "--t", "0.01", "--seed", "1", "--out", "h.nds"]);
    let common = ["--data", "h.nds", "--basis-in", "b.nsb", "--width", "4", "--layers", "2", "--q-hidden", "8"];
    let mut args = vec!["--json", "gradcheck"];
    args.extend(common);
    let v: serde_json::Value = serde_json::from_str(&ok(d, &args)).unwrap();
    assert!(v["metrics"]["max_rel_error"].as_f64().unwrap() <= 1e-5);
    args.extend(["--step", "0.1"]);
    let v: serde_json::Value = serde_json::from_str(&ok(d, &args)).unwrap();
    assert_eq!(v["metrics"]["judged"], false);

    let mut env_run = Command::new(env!("CARGO_BIN_EXE_norm"));
    env_run.current_dir(d).env("NORM_THREADS", "1").args([
        "sweep", "--data", "h.nds", "--basis", "b.nsb", "--grid", "4,8", "--compare-pod", "--epochs", "2", "--width",
        "4", "--layers", "1", "--out", "s.csv",
    ]);
    assert!(env_run.output().unwrap().status.success());
    let csv = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "basis,value,rel_l2,mme,seconds");
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| r.starts_with("pod,")).count(), 2);
}
