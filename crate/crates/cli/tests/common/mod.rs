#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specmesh_core::io::{write_manifest, write_obj};
use specmesh_core::synthetic::{bumpy_dataset, DatasetSpec};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specmesh"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "specmesh {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Writes `n` subjects on an icosphere of the given subdivision level and
/// returns the manifest path and the mesh paths.
pub fn write_dataset(dir: &Path, n: usize, subdivisions: usize) -> (PathBuf, Vec<PathBuf>) {
    let spec = DatasetSpec {
        n_shapes: n,
        subdivisions,
        seed: 7,
        ..Default::default()
    };
    let mut paths = Vec::new();
    for (i, m) in bumpy_dataset(&spec).iter().enumerate() {
        let p = dir.join(format!("face_{i:02}.obj"));
        write_obj(m, &p).unwrap();
        paths.push(p);
    }
    let manifest = dir.join("manifest.json");
    write_manifest(&manifest, &paths).unwrap();
    (manifest, paths)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 10 subjects, 162 vertices, k = 40, d = 8.
pub fn fitted(dir: &Path) -> (PathBuf, Vec<PathBuf>) {
    let (manifest, meshes) = write_dataset(dir, 10, 2);
    let model = dir.join("model.spmd");
    run_ok(&[
        "fit",
        "--dataset",
        s(&manifest),
        "--k",
        "40",
        "--d-low",
        "8",
        "--d-high",
        "8",
        "--out",
        s(&model),
    ]);
    (model, meshes)
}
