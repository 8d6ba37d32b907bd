mod common;

use std::fs;

use common::{fitted, run, run_ok, s, write_dataset};
use specmesh_core::io::load_mesh_auto;
use specmesh_core::latent::LatentModel;
use specmesh_core::metrics::l1_error;

#[test]
fn fit_writes_loadable_model_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_dataset(dir.path(), 10, 2);
    let model = dir.path().join("m.spmd");
    let summary = run_ok(&[
        "fit", "--dataset", s(&manifest), "--k", "40", "--d-low", "8", "--d-high", "8", "--out", s(&model),
    ]);
    assert_eq!(summary["k"], 40);
    assert_eq!(summary["n_vertices"], 162);
    assert_eq!(summary["n_faces"], 320);
    assert_eq!(summary["d_low"], 8);
    assert_eq!(summary["explained_variance"]["low"].as_array().unwrap().len(), 8);
    assert!(summary["timings"]["eigenbasis_s"].as_f64().unwrap() >= 0.0);
    assert!(summary["timings"]["projector_s"].is_null());
    let m = LatentModel::load(&model).unwrap();
    assert_eq!(m.basis().k(), 40);
    assert_eq!(m.subjects()[3], "face_03");
}

#[test]
fn fit_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_dataset(dir.path(), 8, 2);
    let a = dir.path().join("a.spmd");
    let b = dir.path().join("b.spmd");
    for out in [&a, &b] {
        run_ok(&[
            "fit", "--dataset", s(&manifest), "--k", "30", "--d-low", "4", "--d-high", "4", "--seed", "42", "--threads", "2",
            "--out", s(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn fit_clamps_k_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_dataset(dir.path(), 4, 0);
    let model = dir.path().join("m.spmd");
    let summary = run_ok(&["fit", "--dataset", s(&manifest), "--k", "500", "--d-low", "2", "--d-high", "2", "--out", s(&model)]);
    assert_eq!(summary["k"], 11);
    assert_eq!(summary["k_requested"], 500);
    let warnings = summary["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("clamped")));
}

#[test]
fn materialized_projector_is_timed() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_dataset(dir.path(), 4, 1);
    let model = dir.path().join("m.spmd");
    let summary = run_ok(&[
        "fit", "--dataset", s(&manifest), "--k", "10", "--d-low", "2", "--d-high", "2", "--materialize-x", "--out", s(&model),
    ]);
    assert!(summary["timings"]["projector_s"].as_f64().is_some());
}

#[test]
fn decompose_then_reconstruct_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (model, meshes) = fitted(dir.path());
    let out = dir.path().join("bands");
    let files = run_ok(&["decompose", "--model", s(&model), "--mesh", s(&meshes[2]), "--out", s(&out)]);
    let low = out.join("face_02_low.obj");
    let high = out.join("face_02_high.obj");
    assert_eq!(files["low"].as_str().unwrap(), s(&low));
    assert!(high.exists());
    let back = dir.path().join("back.obj");
    // also exercise the dense projector path
    run_ok(&[
        "reconstruct", "--model", s(&model), "--materialize-x", "--mesh", s(&low), "--mesh", s(&high), "--out", s(&back),
    ]);
    let input = load_mesh_auto(&meshes[2]).unwrap();
    let output = load_mesh_auto(&back).unwrap();
    assert!(l1_error(&input, &output).unwrap() <= 1e-8);
}

#[test]
fn interpolation_endpoints_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (model, meshes) = fitted(dir.path());
    let recon = dir.path().join("recon_a.obj");
    run_ok(&["reconstruct", "--model", s(&model), "--mesh", s(&meshes[0]), "--out", s(&recon)]);
    let at0 = dir.path().join("a00.obj");
    let files = run_ok(&[
        "interpolate", "--model", s(&model), "--mesh", s(&meshes[0]), "--mesh", s(&meshes[1]), "--alpha", "0", "--beta", "0",
        "--out", s(&at0),
    ]);
    assert_eq!(files[0]["extrapolated"], false);
    let a = load_mesh_auto(&recon).unwrap();
    let b = load_mesh_auto(&at0).unwrap();
    assert_eq!(a.vertices(), b.vertices());

    let grid = dir.path().join("grid");
    let files = run_ok(&[
        "interpolate", "--model", s(&model), "--mesh", s(&meshes[0]), "--mesh", s(&meshes[1]), "--grid", "2x3", "--out", s(&grid),
    ]);
    assert_eq!(files.as_array().unwrap().len(), 6);
    for name in ["grid_a0.00_b0.00.obj", "grid_a0.50_b0.00.obj", "grid_a1.00_b1.00.obj"] {
        assert!(grid.join(name).exists(), "{name}");
    }
    assert_eq!(
        load_mesh_auto(&grid.join("grid_a0.00_b0.00.obj")).unwrap().vertices(),
        a.vertices()
    );

    let extra = dir.path().join("x.obj");
    let files = run_ok(&[
        "interpolate", "--model", s(&model), "--mesh", s(&meshes[0]), "--mesh", s(&meshes[1]), "--alpha", "1.5", "--beta", "0",
        "--out", s(&extra),
    ]);
    assert_eq!(files[0]["extrapolated"], true);
}

#[test]
fn vertex_interpolation_endpoints_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (_, meshes) = write_dataset(dir.path(), 2, 1);
    for (delta, expect) in [("0", &meshes[0]), ("1", &meshes[1])] {
        let out = dir.path().join(format!("d{delta}.obj"));
        run_ok(&["interpolate", "--mesh", s(&meshes[0]), "--mesh", s(&meshes[1]), "--delta", delta, "--out", s(&out)]);
        assert_eq!(
            load_mesh_auto(&out).unwrap().vertices(),
            load_mesh_auto(expect).unwrap().vertices()
        );
    }
}

#[test]
fn metrics_report_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    let (_, meshes) = write_dataset(dir.path(), 2, 1);
    let report = dir.path().join("report.json");
    let csv = dir.path().join("edges.csv");
    let same = run_ok(&[
        "metrics", "--mesh", s(&meshes[0]), "--mesh", s(&meshes[0]), "--out", s(&report), "--edges-csv", s(&csv),
    ]);
    assert_eq!(same, serde_json::json!({ "l1": 0.0, "dame": 0.0 }));
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(written, same);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("edge_v0,edge_v1,value\n"));
    // 42 vertices, 120 interior edges
    assert_eq!(text.lines().count(), 121);
    let diff = run_ok(&["metrics", "--mesh", s(&meshes[0]), "--mesh", s(&meshes[1])]);
    assert!(diff["l1"].as_f64().unwrap() > 0.0 && diff["dame"].as_f64().unwrap() > 0.0);
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = fitted(dir.path());
    let other_dir = dir.path().join("other");
    fs::create_dir(&other_dir).unwrap();
    let (_, other) = write_dataset(&other_dir, 1, 1);
    let out = run(&["decompose", "--model", s(&model), "--mesh", s(&other[0]), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mesh_core"), "{err}");
    assert!(out.stdout.is_empty());

    let out = run(&["fit", "--dataset", "/nonexistent.json", "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("io"));

    let bad_model = dir.path().join("bad.spmd");
    fs::write(&bad_model, b"not a model").unwrap();
    let out = run(&["reconstruct", "--model", s(&bad_model), "--mesh", s(&other[0]), "--out", s(&dir.path().join("y.obj"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model_file"));

    let out = run(&["interpolate", "--mesh", s(&other[0]), "--mesh", s(&other[0]), "--alpha", "0", "--out", "z.obj"]);
    assert!(!out.status.success());
}
