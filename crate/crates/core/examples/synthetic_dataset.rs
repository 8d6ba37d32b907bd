//! Writes a bumpy-sphere dataset (OBJ files plus `manifest.json`).
//!
//! `cargo run --release -p specmesh-core --example synthetic_dataset -- <out_dir> [n_shapes] [subdivisions] [seed]`
//!
//! Defaults: 200 shapes at subdivision 4 (2562 vertices), seed 42.

use std::path::PathBuf;
use std::process::ExitCode;

use specmesh_core::io::{write_manifest, write_obj};
use specmesh_core::synthetic::{bumpy_dataset, DatasetSpec};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> Result<T, String> {
    args.get(i)
        .map(|s| s.parse().map_err(|_| format!("cannot parse argument {i}: {s:?}")))
        .unwrap_or(Ok(default))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let Some(out) = args.get(1).map(PathBuf::from) else {
        eprintln!("usage: synthetic_dataset <out_dir> [n_shapes] [subdivisions] [seed]");
        return ExitCode::FAILURE;
    };
    let spec = match (|| -> Result<DatasetSpec, String> {
        Ok(DatasetSpec {
            n_shapes: arg(&args, 2, 200)?,
            subdivisions: arg(&args, 3, 4)?,
            seed: arg(&args, 4, 42)?,
            ..Default::default()
        })
    })() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("{}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    let mut paths = Vec::with_capacity(spec.n_shapes);
    for (i, mesh) in bumpy_dataset(&spec).iter().enumerate() {
        let name = PathBuf::from(format!("subject_{i:03}.obj"));
        if let Err(e) = write_obj(mesh, &out.join(&name)) {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
        paths.push(name);
    }
    if let Err(e) = write_manifest(&out.join("manifest.json"), &paths) {
        eprintln!("{e}");
        return ExitCode::FAILURE;
    }
    println!("{} shapes written to {}", paths.len(), out.display());
    ExitCode::SUCCESS
}
