//! Spectral two-band mesh processing: cotangent Laplacian and mass matrix,
//! generalized eigenbasis, low/high band projection, deformation features,
//! linear per-band shape models and perceptual error metrics.

pub mod dataset;
pub mod dr;
pub mod io;
pub mod laplace;
pub mod latent;
pub mod mesh;
pub mod metrics;
pub mod model_file;
pub mod sparse;
pub mod spectral;
pub mod stats;
pub mod synthetic;

pub use dataset::{align_to_mean, MeshDataset, RigidTransform};
pub use dr::{DrCodec, DrFeatures};
pub use latent::{FitConfig, LatentBand, LatentCode, LatentModel};
pub use mesh::{TriangleMesh, Vec3};
pub use metrics::{dame, l1_error, DameConfig, MetricReport};
pub use spectral::{compute_basis, BandProjector, SolverOptions, SpectralBasis};
