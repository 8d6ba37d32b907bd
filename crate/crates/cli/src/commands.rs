//! The pipeline stages behind each subcommand. Every failure is tagged with
//! the stage that produced it.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use specmesh_core::io::{load_mesh_auto, read_manifest, write_obj};
use specmesh_core::latent::{interpolate_vertex, FitConfig, LatentModel};
use specmesh_core::metrics::{dame, per_edge_csv, DameConfig, MetricReport};
use specmesh_core::spectral::{assemble_two_band, compute_basis, decompose_vertices, SolverOptions};
use specmesh_core::{MeshDataset, RigidTransform, TriangleMesh, Vec3};

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct CommandError {
    pub stage: &'static str,
    pub message: String,
}

impl CommandError {
    pub fn new(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CommandError>;
}

impl<T, E: Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CommandError> {
        self.map_err(|e| CommandError::new(stage, e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub dataset: PathBuf,
    pub k: usize,
    pub d_low: usize,
    pub d_high: usize,
    pub gamma: f64,
    pub seed: u64,
    pub materialize_x: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainedVariance {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Wall times in seconds; `projector_s` is set only with dense X.
#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub eigenbasis_s: f64,
    pub projector_s: Option<f64>,
    pub fit_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub model: PathBuf,
    pub n_shapes: usize,
    pub n_vertices: usize,
    pub n_faces: usize,
    pub k: usize,
    pub k_requested: usize,
    pub d_low: usize,
    pub d_high: usize,
    pub gamma: f64,
    pub seed: u64,
    pub explained_variance: ExplainedVariance,
    pub timings: Timings,
    pub warnings: Vec<String>,
}

fn load_mesh(path: &Path) -> Result<TriangleMesh, CommandError> {
    load_mesh_auto(path).stage("io")
}

/// File stems as subject names, or `None` if they collide.
fn subject_names(paths: &[PathBuf]) -> Option<Vec<String>> {
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect::<Option<_>>()?;
    let unique: BTreeSet<&String> = names.iter().collect();
    (unique.len() == names.len()).then_some(names)
}

pub fn fit(args: &FitArgs) -> Result<FitSummary, CommandError> {
    let start = Instant::now();
    if args.k == 0 {
        return Err(CommandError::new("config", "k must be at least 1"));
    }
    let paths = read_manifest(&args.dataset).stage("io")?;
    let raw = paths.iter().map(|p| load_mesh(p)).collect::<Result<Vec<_>, _>>()?;
    let dataset = MeshDataset::preprocess(&raw).stage("mesh_core")?;

    let mut warnings = Vec::new();
    let n = dataset.n_vertices();
    // k = N would make X the identity and leave the high band empty
    let k_max = n.saturating_sub(1).max(1);
    let k = if args.k > k_max {
        let msg = format!("k = {} exceeds the {k_max} modes available below N = {n}; clamped to {k_max}", args.k);
        log::warn!("{msg}");
        warnings.push(msg);
        k_max
    } else {
        args.k
    };

    let t = Instant::now();
    let opts = SolverOptions {
        seed: args.seed,
        ..Default::default()
    };
    let basis = Arc::new(compute_basis(&dataset.mean_mesh(), k, &opts).stage("spectral_engine")?);
    let eigenbasis_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let config = FitConfig {
        d_low: args.d_low,
        d_high: args.d_high,
        gamma: args.gamma,
    };
    let mut model = LatentModel::fit(&dataset, basis, &config).stage("latent_model")?;
    if let Some(names) = subject_names(&paths) {
        model.set_subject_names(names).stage("latent_model")?;
    }
    let fit_s = t.elapsed().as_secs_f64();

    let projector_s = args.materialize_x.then(|| {
        let t = Instant::now();
        model.materialize_projector();
        t.elapsed().as_secs_f64()
    });

    model.save(&args.out).stage("model_file")?;
    warnings.extend(model.warnings().iter().cloned());
    Ok(FitSummary {
        model: args.out.clone(),
        n_shapes: dataset.n_shapes(),
        n_vertices: n,
        n_faces: dataset.faces().len(),
        k,
        k_requested: args.k,
        d_low: model.d_low(),
        d_high: model.d_high(),
        gamma: model.gamma(),
        seed: args.seed,
        explained_variance: ExplainedVariance {
            low: model.low_band().explained_variance().to_vec(),
            high: model.high_band().explained_variance().to_vec(),
        },
        timings: Timings {
            eigenbasis_s,
            projector_s,
            fit_s,
            total_s: start.elapsed().as_secs_f64(),
        },
        warnings,
    })
}

pub fn load_model(path: &Path, materialize_x: bool) -> Result<LatentModel, CommandError> {
    let mut model = LatentModel::load(path).stage("model_file")?;
    if materialize_x {
        model.materialize_projector();
    }
    Ok(model)
}

fn check_mesh(model: &LatentModel, mesh: &TriangleMesh) -> Result<(), CommandError> {
    model.mean_mesh().check_same_connectivity(mesh).stage("mesh_core")
}

fn transformed(t: &RigidTransform, points: &[Vec3]) -> Vec<Vec3> {
    points.iter().map(|p| t.apply(p)).collect()
}

fn write_mesh(model: &LatentModel, vertices: Vec<Vec3>, path: &Path) -> Result<(), CommandError> {
    let mesh = model.mean_mesh().with_vertices(vertices).stage("mesh_core")?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).stage("io")?;
    }
    write_obj(&mesh, path).stage("io")
}

#[derive(Debug, Clone, Serialize)]
pub struct DecomposeOutput {
    pub low: PathBuf,
    pub high: PathBuf,
}

/// Splits a mesh into `<stem>_low.obj` and `<stem>_high.obj` in `out_dir`.
///
/// The split happens in the model frame; both bands are mapped back to the
/// input pose, so assembling them reproduces the input.
pub fn decompose(model: &LatentModel, mesh_path: &Path, out_dir: &Path) -> Result<DecomposeOutput, CommandError> {
    let mesh = load_mesh(mesh_path)?;
    check_mesh(model, &mesh)?;
    let (aligned, t) = model.align(mesh.vertices()).stage("mesh_core")?;
    let (low, high) = decompose_vertices(model.low_projector(), model.mean_vertices(), &aligned).stage("spectral_engine")?;
    let back = t.inverse();
    let stem = mesh_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into());
    let out = DecomposeOutput {
        low: out_dir.join(format!("{stem}_low.obj")),
        high: out_dir.join(format!("{stem}_high.obj")),
    };
    write_mesh(model, transformed(&back, &low), &out.low)?;
    write_mesh(model, transformed(&back, &high), &out.high)?;
    Ok(out)
}

/// Two meshes: band assembly of a low and a high band mesh. One mesh: encode
/// and decode through the latent model, output in the model frame.
pub fn reconstruct(model: &LatentModel, meshes: &[PathBuf], gamma: Option<f64>, out: &Path) -> Result<(), CommandError> {
    let vertices = match meshes {
        [single] => {
            let mesh = load_mesh(single)?;
            check_mesh(model, &mesh)?;
            let (aligned, _) = model.align(mesh.vertices()).stage("mesh_core")?;
            let code = model.encode_vertices(&aligned).stage("latent_model")?;
            model.decode_vertices(&code, gamma).stage("latent_model")?
        }
        [low, high] => {
            let low = load_mesh(low)?;
            let high = load_mesh(high)?;
            check_mesh(model, &low)?;
            check_mesh(model, &high)?;
            assemble_two_band(model.low_projector(), low.vertices(), high.vertices()).stage("spectral_engine")?
        }
        _ => {
            return Err(CommandError::new(
                "config",
                format!("reconstruct takes one mesh or a low/high pair, got {}", meshes.len()),
            ))
        }
    };
    write_mesh(model, vertices, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterpolationMode {
    Latent { alpha: f64, beta: f64 },
    /// `rows` values of beta by `cols` values of alpha, evenly spaced on [0, 1].
    Grid { rows: usize, cols: usize },
    Vertex { delta: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolatedFile {
    pub path: PathBuf,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub extrapolated: bool,
}

/// Parses `RxC`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid {s:?} is not of the form RxC"))?;
    let r: usize = r.trim().parse().map_err(|e| format!("grid rows: {e}"))?;
    let c: usize = c.trim().parse().map_err(|e| format!("grid columns: {e}"))?;
    if r == 0 || c == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((r, c))
}

fn spaced(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count).map(|i| i as f64 / (count - 1) as f64).collect()
}

pub fn grid_file_name(alpha: f64, beta: f64) -> String {
    format!("grid_a{alpha:.2}_b{beta:.2}.obj")
}

/// `out` is a file for single results and a directory for grids. Latent
/// results are in the model frame; vertex interpolation uses the inputs as
/// given.
pub fn interpolate(
    model: Option<&LatentModel>,
    a: &Path,
    b: &Path,
    mode: InterpolationMode,
    gamma: Option<f64>,
    out: &Path,
) -> Result<Vec<InterpolatedFile>, CommandError> {
    let ma = load_mesh(a)?;
    let mb = load_mesh(b)?;
    if let InterpolationMode::Vertex { delta } = mode {
        let r = interpolate_vertex(&ma, &mb, delta).stage("latent_model")?;
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).stage("io")?;
        }
        write_obj(&r.value, out).stage("io")?;
        return Ok(vec![InterpolatedFile {
            path: out.to_path_buf(),
            alpha: None,
            beta: None,
            delta: Some(delta),
            extrapolated: r.extrapolated,
        }]);
    }
    let model = model.ok_or_else(|| CommandError::new("config", "latent interpolation needs --model"))?;
    let code = |m: &TriangleMesh| {
        check_mesh(model, m)?;
        let (aligned, _) = model.align(m.vertices()).stage("mesh_core")?;
        model.encode_vertices(&aligned).stage("latent_model")
    };
    let (za, zb) = (code(&ma)?, code(&mb)?);
    let points: Vec<(f64, f64, PathBuf)> = match mode {
        InterpolationMode::Latent { alpha, beta } => vec![(alpha, beta, out.to_path_buf())],
        InterpolationMode::Grid { rows, cols } => spaced(rows)
            .into_iter()
            .flat_map(|beta| spaced(cols).into_iter().map(move |alpha| (alpha, beta)))
            .map(|(alpha, beta)| (alpha, beta, out.join(grid_file_name(alpha, beta))))
            .collect(),
        InterpolationMode::Vertex { .. } => unreachable!(),
    };
    points
        .into_iter()
        .map(|(alpha, beta, path)| {
            let r = model.interpolate_latent(&za, &zb, alpha, beta, gamma).stage("latent_model")?;
            write_mesh(model, r.value, &path)?;
            Ok(InterpolatedFile {
                path,
                alpha: Some(alpha),
                beta: Some(beta),
                delta: None,
                extrapolated: r.extrapolated,
            })
        })
        .collect()
}

/// Writes the JSON report (and optionally the per-edge CSV); returns the report.
pub fn metrics(
    reference: &Path,
    test: &Path,
    out: Option<&Path>,
    edges_csv: Option<&Path>,
) -> Result<MetricReport, CommandError> {
    let r = load_mesh(reference)?;
    let t = load_mesh(test)?;
    let report = dame(&r, &t, &DameConfig::default()).stage("quality_metrics")?;
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report).stage("io")?;
        fs::write(path, json + "\n").stage("io")?;
    }
    if let Some(path) = edges_csv {
        fs::write(path, per_edge_csv(&report)).stage("io")?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_names() {
        assert_eq!(parse_grid("3x4"), Ok((3, 4)));
        assert_eq!(parse_grid("2X2"), Ok((2, 2)));
        assert!(parse_grid("0x2").is_err());
        assert!(parse_grid("3").is_err());
        assert_eq!(grid_file_name(0.5, 1.0), "grid_a0.50_b1.00.obj");
        assert_eq!(spaced(3), vec![0.0, 0.5, 1.0]);
        assert_eq!(spaced(1), vec![0.0]);
    }

    #[test]
    fn subject_names_need_unique_stems() {
        let a = vec![PathBuf::from("x/a.obj"), PathBuf::from("y/b.ply")];
        assert_eq!(subject_names(&a), Some(vec!["a".into(), "b".into()]));
        let dup = vec![PathBuf::from("x/a.obj"), PathBuf::from("y/a.obj")];
        assert_eq!(subject_names(&dup), None);
    }

    #[test]
    fn errors_carry_stage() {
        let e = fit(&FitArgs {
            dataset: "/nonexistent/manifest.json".into(),
            k: 10,
            d_low: 2,
            d_high: 2,
            gamma: 1.0,
            seed: 42,
            materialize_x: false,
            out: "/tmp/unused.spmd".into(),
        })
        .unwrap_err();
        assert_eq!(e.stage, "io");
        assert!(e.to_string().starts_with("io: "));
    }
}
