use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use specmesh_cli::commands::{self, CommandError, FitArgs, InterpolationMode};
use specmesh_cli::service;
use specmesh_core::latent::{DEFAULT_GAMMA, DEFAULT_LATENT_DIM};

#[derive(Parser)]
#[command(name = "specmesh", version, about = "Two-band spectral mesh models: fit, decompose, reconstruct, interpolate, compare, serve")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArg {
    #[arg(long)]
    model: PathBuf,
    /// Precompute the dense low-band projector.
    #[arg(long)]
    materialize_x: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset manifest and write the model file.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_LATENT_DIM)]
        d_low: usize,
        #[arg(long, default_value_t = DEFAULT_LATENT_DIM)]
        d_high: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        materialize_x: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write `<stem>_low.obj` and `<stem>_high.obj` for a mesh.
    Decompose {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Assemble a low/high pair, or round-trip one mesh through the model.
    Reconstruct {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, required = true, num_args = 1)]
        mesh: Vec<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent interpolation (--alpha/--beta or --grid) or vertex interpolation (--delta).
    Interpolate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        materialize_x: bool,
        /// Subjects A and B.
        #[arg(long, num_args = 1, required = true)]
        mesh: Vec<PathBuf>,
        #[arg(long, conflicts_with_all = ["grid", "delta"], requires = "beta")]
        alpha: Option<f64>,
        #[arg(long, conflicts_with_all = ["grid", "delta"], requires = "alpha")]
        beta: Option<f64>,
        /// `RxC`: R values of beta by C values of alpha on [0, 1].
        #[arg(long, value_parser = commands::parse_grid, conflicts_with = "delta")]
        grid: Option<(usize, usize)>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Output file, or directory for --grid.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a test mesh against a reference: L1 and DAME.
    Metrics {
        /// Reference then test mesh.
        #[arg(long, num_args = 1, required = true)]
        mesh: Vec<PathBuf>,
        /// JSON report path; printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-edge values for heatmaps.
        #[arg(long)]
        edges_csv: Option<PathBuf>,
    },
    /// Serve the model over HTTP.
    Serve {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CommandError::new("io", e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn two(meshes: &[PathBuf], what: &str) -> Result<(PathBuf, PathBuf), CommandError> {
    match meshes {
        [a, b] => Ok((a.clone(), b.clone())),
        _ => Err(CommandError::new("config", format!("{what} takes exactly two --mesh arguments"))),
    }
}

fn run(cli: Cli) -> Result<(), CommandError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CommandError::new("config", e.to_string()))?;
    }
    match cli.command {
        Command::Fit {
            dataset,
            k,
            d_low,
            d_high,
            gamma,
            seed,
            materialize_x,
            out,
        } => print_json(&commands::fit(&FitArgs {
            dataset,
            k,
            d_low,
            d_high,
            gamma,
            seed,
            materialize_x,
            out,
        })?),
        Command::Decompose { model, mesh, out } => {
            let m = commands::load_model(&model.model, model.materialize_x)?;
            print_json(&commands::decompose(&m, &mesh, &out)?)
        }
        Command::Reconstruct { model, mesh, gamma, out } => {
            let m = commands::load_model(&model.model, model.materialize_x)?;
            commands::reconstruct(&m, &mesh, gamma, &out)?;
            print_json(&serde_json::json!({ "out": out }))
        }
        Command::Interpolate {
            model,
            materialize_x,
            mesh,
            alpha,
            beta,
            grid,
            delta,
            gamma,
            out,
        } => {
            let (a, b) = two(&mesh, "interpolate")?;
            let mode = match (alpha.zip(beta), grid, delta) {
                (Some((alpha, beta)), None, None) => InterpolationMode::Latent { alpha, beta },
                (None, Some((rows, cols)), None) => InterpolationMode::Grid { rows, cols },
                (None, None, Some(delta)) => InterpolationMode::Vertex { delta },
                _ => {
                    return Err(CommandError::new(
                        "config",
                        "give exactly one of --alpha/--beta, --grid or --delta",
                    ))
                }
            };
            let m = model.map(|p| commands::load_model(&p, materialize_x)).transpose()?;
            let files = commands::interpolate(m.as_ref(), &a, &b, mode, gamma, &out)?;
            for f in files.iter().filter(|f| f.extrapolated) {
                log::warn!("{} is extrapolated (weights outside [0, 1])", f.path.display());
            }
            print_json(&files)
        }
        Command::Metrics { mesh, out, edges_csv } => {
            let (reference, test) = two(&mesh, "metrics")?;
            print_json(&commands::metrics(&reference, &test, out.as_deref(), edges_csv.as_deref())?)
        }
        Command::Serve { model, port, host } => {
            let m = commands::load_model(&model.model, model.materialize_x)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CommandError::new("serve", e.to_string()))?;
            runtime
                .block_on(service::serve(m, &host, port))
                .map_err(|e| CommandError::new("serve", e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
