//! Linear two-band shape model: truncated PCA per band, ridge-regression
//! cross-band conditioning scaled by `gamma`, latent and vertex-space
//! interpolation and per-band editing.
//!
//! Low band features are standardized coordinates (`3N` values); high band
//! features are normalized deformation features against the mean mesh
//! (`9N` values). Decoding rebuilds both band meshes and assembles them with
//! `P'_high + X (P'_low - P'_high)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{align_to_mean, MeshDataset, RigidTransform};
use crate::dr::{DrCodec, DrError, DrFeatures};
use crate::mesh::{MeshError, TriangleMesh, Vec3};
use crate::spectral::{assemble_two_band, decompose_vertices, BandProjector, SpectralBasis, SpectralError};
use crate::stats::{self, FeatureStats, StatsError};

pub const DEFAULT_LATENT_DIM: usize = 32;
pub const DEFAULT_GAMMA: f64 = 1.0;
const RIDGE: f64 = 1e-6;
/// Gram eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatentError {
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} contains non-finite values")]
    NonFinite { what: &'static str },
    #[error("{band:?} component {index} out of range (dimension {dim})")]
    IndexOutOfRange { band: LatentBand, index: usize, dim: usize },
    #[error("gamma {0} outside [0, 1]")]
    InvalidGamma(f64),
    #[error("latent dimension must be at least 1")]
    ZeroDimension,
    #[error("training features of the {0:?} band have no variation")]
    NoVariation(LatentBand),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dr(#[from] DrError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentBand {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z_low: Vec<f64>,
    pub z_high: Vec<f64>,
}

/// Mean feature vector plus orthonormal principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBand {
    pub(crate) mean: Vec<f64>,
    pub(crate) components: DMatrix<f64>,
    pub(crate) variance: Vec<f64>,
}

impl PcaBand {
    /// PCA of `rows` through the snapshot Gram matrix. Returns the band, the
    /// numerical rank of the centered data and the training coefficients.
    fn fit(rows: &[Vec<f64>], d: usize) -> (Self, usize, DMatrix<f64>) {
        let s = rows.len();
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= s as f64);
        let centered = DMatrix::from_fn(dim, s, |i, j| rows[j][i] - mean[i]);
        let gram = centered.transpose() * &centered;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let rank = order
            .iter()
            .take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * top && eig.eigenvalues[i] > 0.0)
            .count();
        let d = d.min(rank);
        let mut components = DMatrix::zeros(dim, d);
        for (c, &i) in order.iter().take(d).enumerate() {
            let v = eig.eigenvectors.column(i);
            let col = &centered * v / eig.eigenvalues[i].sqrt();
            components.set_column(c, &col);
        }
        orthonormalize(&mut components);
        let variance = order.iter().take(d).map(|&i| eig.eigenvalues[i] / s as f64).collect();
        let coeffs = components.transpose() * &centered;
        (
            Self {
                mean,
                components,
                variance,
            },
            rank,
            coeffs,
        )
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-component variance, nonincreasing.
    pub fn explained_variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let c = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        (self.components.transpose() * c).iter().copied().collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let v = &self.components * DVector::from_column_slice(z);
        v.iter().zip(&self.mean).map(|(a, m)| a + m).collect()
    }
}

/// Two passes of modified Gram-Schmidt with deterministic column signs.
fn orthonormalize(m: &mut DMatrix<f64>) {
    for _ in 0..2 {
        for j in 0..m.ncols() {
            for i in 0..j {
                let d = m.column(i).dot(&m.column(j));
                let ci = m.column(i).into_owned();
                m.column_mut(j).axpy(-d, &ci, 1.0);
            }
            let n = m.column(j).norm();
            m.column_mut(j).unscale_mut(n);
        }
    }
    for mut col in m.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-8 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// `R Z^T (Z Z^T + ridge I)^-1`: maps coefficients `Z` (d x S) onto
/// residuals `R` (dim x S).
fn ridge_map(z: &DMatrix<f64>, residual: &DMatrix<f64>) -> DMatrix<f64> {
    let d = z.nrows();
    let a = z * z.transpose() + DMatrix::identity(d, d) * RIDGE;
    let chol = a.cholesky().expect("ridge system is SPD");
    // (A^-1 Z R^T)^T
    chol.solve(&(z * residual.transpose())).transpose()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub d_low: usize,
    pub d_high: usize,
    pub gamma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            d_low: DEFAULT_LATENT_DIM,
            d_high: DEFAULT_LATENT_DIM,
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// Feature vectors of both bands, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct BandFeatures {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug)]
pub struct LatentModel {
    pub(crate) faces: Vec<[usize; 3]>,
    pub(crate) mean: Vec<Vec3>,
    pub(crate) scale: f64,
    pub(crate) basis: Arc<SpectralBasis>,
    pub(crate) low: PcaBand,
    pub(crate) high: PcaBand,
    /// `3N x d_high`, high code to low-feature residual.
    pub(crate) cond_high_to_low: DMatrix<f64>,
    /// `9N x d_low`, low code to high-feature residual.
    pub(crate) cond_low_to_high: DMatrix<f64>,
    pub(crate) gamma: f64,
    pub(crate) low_stats: FeatureStats,
    pub(crate) high_stats: FeatureStats,
    pub(crate) subjects: Vec<String>,
    pub(crate) training_codes: Vec<LatentCode>,
    pub(crate) warnings: Vec<String>,
    pub(crate) mean_mesh: TriangleMesh,
    pub(crate) codec: DrCodec,
    pub(crate) low_projector: BandProjector,
}

fn check_gamma(gamma: f64) -> Result<(), LatentError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LatentError::InvalidGamma(gamma));
    }
    Ok(())
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

impl LatentModel {
    pub fn fit(dataset: &MeshDataset, basis: Arc<SpectralBasis>, config: &FitConfig) -> Result<Self, LatentError> {
        check_gamma(config.gamma)?;
        if config.d_low == 0 || config.d_high == 0 {
            return Err(LatentError::ZeroDimension);
        }
        basis.check_connectivity(dataset.connectivity_hash())?;
        let mean_mesh = dataset.mean_mesh();
        let codec = DrCodec::new(&mean_mesh)?;
        let low_projector = BandProjector::low(basis.clone());

        // per-shape work is independent; collect keeps dataset order
        let split: Vec<(Vec<Vec3>, DrFeatures)> = dataset
            .shapes()
            .par_iter()
            .map(|shape| -> Result<_, LatentError> {
                let (p_low, p_high) = decompose_vertices(&low_projector, dataset.mean_vertices(), shape)?;
                Ok((p_low, codec.encode(&p_high)?))
            })
            .collect::<Result<_, _>>()?;
        let (lows, highs): (Vec<_>, Vec<_>) = split.into_iter().unzip();
        let low_stats = FeatureStats::meanstd(&lows)?;
        let high_stats = FeatureStats::minmax(&highs)?;
        let low_rows: Vec<Vec<f64>> = lows
            .iter()
            .map(|p| stats::standardize_coords(p, &low_stats).map(|s| flatten(&s)))
            .collect::<Result<_, _>>()?;
        let high_rows: Vec<Vec<f64>> = highs
            .iter()
            .map(|f| stats::normalize_dr(f, &high_stats).map(|n| n.to_flat()))
            .collect::<Result<_, _>>()?;

        let mut warnings = Vec::new();
        let (low, low_rank, z_low) = PcaBand::fit(&low_rows, config.d_low);
        let (high, high_rank, z_high) = PcaBand::fit(&high_rows, config.d_high);
        for (band, rank, want, got) in [
            (LatentBand::Low, low_rank, config.d_low, low.dim()),
            (LatentBand::High, high_rank, config.d_high, high.dim()),
        ] {
            if got == 0 {
                return Err(LatentError::NoVariation(band));
            }
            if got < want {
                let msg = format!("{band:?} band: requested d = {want} exceeds data rank {rank}; clamped");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }

        let residual = |band: &PcaBand, rows: &[Vec<f64>], z: &DMatrix<f64>| {
            let centered = DMatrix::from_fn(band.feature_dim(), rows.len(), |i, j| rows[j][i] - band.mean[i]);
            centered - &band.components * z
        };
        let cond_low_to_high = ridge_map(&z_low, &residual(&high, &high_rows, &z_high));
        let cond_high_to_low = ridge_map(&z_high, &residual(&low, &low_rows, &z_low));
        let training_codes = (0..dataset.n_shapes())
            .map(|j| LatentCode {
                z_low: z_low.column(j).iter().copied().collect(),
                z_high: z_high.column(j).iter().copied().collect(),
            })
            .collect();

        Ok(Self {
            faces: dataset.faces().to_vec(),
            mean: dataset.mean_vertices().to_vec(),
            scale: dataset.scale(),
            basis,
            low,
            high,
            cond_high_to_low,
            cond_low_to_high,
            gamma: config.gamma,
            low_stats,
            high_stats,
            subjects: (0..dataset.n_shapes()).map(|i| format!("subject_{i:03}")).collect(),
            training_codes,
            warnings,
            mean_mesh,
            codec,
            low_projector,
        })
    }

    /// Renames the training subjects (one name per dataset shape).
    pub fn set_subject_names(&mut self, names: Vec<String>) -> Result<(), LatentError> {
        if names.len() != self.training_codes.len() {
            return Err(LatentError::DimensionMismatch {
                what: "subject names",
                expected: self.training_codes.len(),
                found: names.len(),
            });
        }
        self.subjects = names;
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.mean.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn mean_vertices(&self) -> &[Vec3] {
        &self.mean
    }

    pub fn mean_mesh(&self) -> &TriangleMesh {
        &self.mean_mesh
    }

    pub fn connectivity_hash(&self) -> u64 {
        self.mean_mesh.connectivity_hash()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn low_projector(&self) -> &BandProjector {
        &self.low_projector
    }

    /// Opts into a dense `X` table for batch work.
    pub fn materialize_projector(&mut self) {
        self.low_projector.materialize();
    }

    pub fn d_low(&self) -> usize {
        self.low.dim()
    }

    pub fn d_high(&self) -> usize {
        self.high.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn low_band(&self) -> &PcaBand {
        &self.low
    }

    pub fn high_band(&self) -> &PcaBand {
        &self.high
    }

    pub fn low_stats(&self) -> &FeatureStats {
        &self.low_stats
    }

    pub fn high_stats(&self) -> &FeatureStats {
        &self.high_stats
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn training_codes(&self) -> &[LatentCode] {
        &self.training_codes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn codec(&self) -> &DrCodec {
        &self.codec
    }

    /// Rigidly aligns raw positions into the model frame.
    pub fn align(&self, points: &[Vec3]) -> Result<(Vec<Vec3>, RigidTransform), LatentError> {
        self.check_vertices(points)?;
        Ok(align_to_mean(points, &self.mean, self.scale))
    }

    fn check_vertices(&self, points: &[Vec3]) -> Result<(), LatentError> {
        if points.len() != self.n_vertices() {
            return Err(LatentError::DimensionMismatch {
                what: "vertex count",
                expected: self.n_vertices(),
                found: points.len(),
            });
        }
        if !points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(LatentError::NonFinite { what: "vertices" });
        }
        Ok(())
    }

    /// Feature vectors of both bands for positions in the model frame.
    pub fn features(&self, points: &[Vec3]) -> Result<BandFeatures, LatentError> {
        self.check_vertices(points)?;
        let (p_low, p_high) = decompose_vertices(&self.low_projector, &self.mean, points)?;
        let low = flatten(&stats::standardize_coords(&p_low, &self.low_stats)?);
        let high = stats::normalize_dr(&self.codec.encode(&p_high)?, &self.high_stats)?.to_flat();
        Ok(BandFeatures { low, high })
    }

    /// Code of positions already in the model frame.
    pub fn encode_vertices(&self, points: &[Vec3]) -> Result<LatentCode, LatentError> {
        let f = self.features(points)?;
        Ok(LatentCode {
            z_low: self.low.project(&f.low),
            z_high: self.high.project(&f.high),
        })
    }

    /// Code of a mesh in the model frame; connectivity must match.
    pub fn encode(&self, mesh: &TriangleMesh) -> Result<LatentCode, LatentError> {
        self.mean_mesh.check_same_connectivity(mesh)?;
        self.encode_vertices(mesh.vertices())
    }

    pub fn check_code(&self, code: &LatentCode) -> Result<(), LatentError> {
        if code.z_low.len() != self.d_low() {
            return Err(LatentError::DimensionMismatch {
                what: "z_low",
                expected: self.d_low(),
                found: code.z_low.len(),
            });
        }
        if code.z_high.len() != self.d_high() {
            return Err(LatentError::DimensionMismatch {
                what: "z_high",
                expected: self.d_high(),
                found: code.z_high.len(),
            });
        }
        if !code.z_low.iter().chain(&code.z_high).all(|x| x.is_finite()) {
            return Err(LatentError::NonFinite { what: "latent code" });
        }
        Ok(())
    }

    /// Band features of `code`; `gamma` defaults to the fitted value.
    pub fn decode_features(&self, code: &LatentCode, gamma: Option<f64>) -> Result<BandFeatures, LatentError> {
        self.check_code(code)?;
        let gamma = gamma.unwrap_or(self.gamma);
        check_gamma(gamma)?;
        let mut low = self.low.reconstruct(&code.z_low);
        let mut high = self.high.reconstruct(&code.z_high);
        if gamma != 0.0 {
            let zh = DVector::from_column_slice(&code.z_high);
            let zl = DVector::from_column_slice(&code.z_low);
            for (f, c) in low.iter_mut().zip((&self.cond_high_to_low * zh).iter()) {
                *f += gamma * c;
            }
            for (f, c) in high.iter_mut().zip((&self.cond_low_to_high * zl).iter()) {
                *f += gamma * c;
            }
        }
        Ok(BandFeatures { low, high })
    }

    /// Low and high band meshes rebuilt from features.
    pub fn band_meshes(&self, features: &BandFeatures) -> Result<(Vec<Vec3>, Vec<Vec3>), LatentError> {
        let p_low = stats::destandardize_coords(&unflatten(&features.low), &self.low_stats)?;
        let dr = stats::denormalize_dr(&DrFeatures::from_flat(&features.high)?, &self.high_stats)?;
        let p_high = self.codec.decode(&dr)?;
        Ok((p_low, p_high))
    }

    pub fn decode_vertices(&self, code: &LatentCode, gamma: Option<f64>) -> Result<Vec<Vec3>, LatentError> {
        let f = self.decode_features(code, gamma)?;
        let (p_low, p_high) = self.band_meshes(&f)?;
        Ok(assemble_two_band(&self.low_projector, &p_low, &p_high)?)
    }

    pub fn decode(&self, code: &LatentCode, gamma: Option<f64>) -> Result<TriangleMesh, LatentError> {
        Ok(self.mean_mesh.with_vertices(self.decode_vertices(code, gamma)?)?)
    }

    /// Replaces one coefficient of one band.
    pub fn edit_band(
        &self,
        code: &LatentCode,
        band: LatentBand,
        component: usize,
        value: f64,
    ) -> Result<LatentCode, LatentError> {
        self.check_code(code)?;
        let mut out = code.clone();
        let z = match band {
            LatentBand::Low => &mut out.z_low,
            LatentBand::High => &mut out.z_high,
        };
        let dim = z.len();
        *z.get_mut(component).ok_or(LatentError::IndexOutOfRange {
            band,
            index: component,
            dim,
        })? = value;
        Ok(out)
    }

    /// Decode of the blended code: `beta` mixes the low band, `alpha` the high.
    pub fn interpolate_latent(
        &self,
        a: &LatentCode,
        b: &LatentCode,
        alpha: f64,
        beta: f64,
        gamma: Option<f64>,
    ) -> Result<Interpolated<Vec<Vec3>>, LatentError> {
        self.check_code(a)?;
        self.check_code(b)?;
        let blended = interpolate_codes(a, b, alpha, beta);
        Ok(Interpolated {
            extrapolated: blended.extrapolated,
            value: self.decode_vertices(&blended.value, gamma)?,
        })
    }
}

/// A result tagged when any blend weight lies outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated<T> {
    pub value: T,
    pub extrapolated: bool,
}

fn outside_unit(t: f64) -> bool {
    !(0.0..=1.0).contains(&t)
}

/// `[(1 - beta) a_low + beta b_low | (1 - alpha) a_high + alpha b_high]`.
pub fn interpolate_codes(a: &LatentCode, b: &LatentCode, alpha: f64, beta: f64) -> Interpolated<LatentCode> {
    let mix = |x: &[f64], y: &[f64], t: f64| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| (1.0 - t) * p + t * q).collect() };
    Interpolated {
        value: LatentCode {
            z_low: mix(&a.z_low, &b.z_low, beta),
            z_high: mix(&a.z_high, &b.z_high, alpha),
        },
        extrapolated: outside_unit(alpha) || outside_unit(beta),
    }
}

/// `P1 + delta (P2 - P1)` per vertex, evaluated as `(1 - delta) P1 + delta P2`
/// so both endpoints are exact.
pub fn interpolate_vertex(a: &TriangleMesh, b: &TriangleMesh, delta: f64) -> Result<Interpolated<TriangleMesh>, LatentError> {
    a.check_same_connectivity(b)?;
    let verts = a
        .vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| p * (1.0 - delta) + q * delta)
        .collect();
    Ok(Interpolated {
        value: a.with_vertices(verts)?,
        extrapolated: outside_unit(delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{compute_basis, SolverOptions};
    use crate::synthetic::{self, DatasetSpec};
    use std::sync::OnceLock;

    struct Fixture {
        dataset: MeshDataset,
        basis: Arc<SpectralBasis>,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let raw = synthetic::bumpy_dataset(&DatasetSpec {
                n_shapes: 8,
                subdivisions: 2,
                seed: 3,
                ..Default::default()
            });
            let dataset = MeshDataset::preprocess(&raw).unwrap();
            let basis = Arc::new(compute_basis(&dataset.mean_mesh(), 30, &SolverOptions::default()).unwrap());
            Fixture { dataset, basis }
        })
    }

    fn model(d_low: usize, d_high: usize, gamma: f64) -> LatentModel {
        let f = fixture();
        LatentModel::fit(&f.dataset, f.basis.clone(), &FitConfig { d_low, d_high, gamma }).unwrap()
    }

    fn max_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn pca_basics() {
        // one direction of variation: d = 1 is lossless
        let dir = [1.0, -2.0, 0.5, 3.0];
        let rows: Vec<Vec<f64>> = [-1.0, 0.2, 0.7, 2.0]
            .iter()
            .map(|t| dir.iter().map(|d| 1.0 + t * d).collect())
            .collect();
        let (band, rank, z) = PcaBand::fit(&rows, 3);
        assert_eq!(rank, 1);
        assert_eq!(band.dim(), 1);
        for (j, r) in rows.iter().enumerate() {
            let back = band.reconstruct(&[z[(0, j)]]);
            assert!(back.iter().zip(r).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let m = model(32, 32, 1.0);
        for band in [m.low_band(), m.high_band()] {
            let c = &band.components;
            assert!((c.transpose() * c - DMatrix::identity(c.ncols(), c.ncols())).amax() < 1e-8);
            assert!(band.explained_variance().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn full_rank_is_lossless_and_clamps() {
        let m = model(32, 32, 1.0);
        assert_eq!((m.d_low(), m.d_high()), (7, 7));
        assert_eq!(m.warnings().len(), 2);
        let ds = &fixture().dataset;
        for (i, code) in m.training_codes().iter().enumerate() {
            let out = m.decode_vertices(code, None).unwrap();
            assert!(max_diff(&out, ds.shape(i).unwrap()) < 1e-6);
            let again = m.encode_vertices(ds.shape(i).unwrap()).unwrap();
            let dz: f64 = again.z_low.iter().chain(&again.z_high).zip(code.z_low.iter().chain(&code.z_high)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dz < 1e-9);
        }
        let a = &m.training_codes()[0];
        let b = &m.training_codes()[1];
        assert!(a != b);
    }

    #[test]
    fn mean_low_band_code_is_zero() {
        let m = model(4, 4, 0.0);
        let code = m.encode_vertices(m.mean_vertices()).unwrap();
        assert!(code.z_low.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn disentangled_at_gamma_zero() {
        let m = model(4, 4, 0.0);
        let base = m.training_codes()[2].clone();
        let edited_high = m.edit_band(&base, LatentBand::High, 1, 3.0).unwrap();
        let edited_low = m.edit_band(&base, LatentBand::Low, 0, -2.0).unwrap();
        let p0 = m.decode_vertices(&base, None).unwrap();
        let ph = m.decode_vertices(&edited_high, None).unwrap();
        let pl = m.decode_vertices(&edited_low, None).unwrap();
        let low = m.low_projector();
        let high = BandProjector::high(m.basis().clone());
        assert!(max_diff(&low.apply(&p0).unwrap(), &low.apply(&ph).unwrap()) < 1e-6);
        assert!(max_diff(&high.apply(&p0).unwrap(), &high.apply(&pl).unwrap()) < 1e-6);
        assert!(max_diff(&p0, &ph) > 1e-4);
        assert_eq!(m.edit_band(&base, LatentBand::Low, 2, base.z_low[2]).unwrap(), base);
        assert!(matches!(
            m.edit_band(&base, LatentBand::High, 4, 0.0),
            Err(LatentError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn gamma_moves_low_band_affinely() {
        let m = model(3, 3, 1.0);
        let code = m.training_codes()[4].clone();
        let low = m.low_projector();
        let at = |g: f64| low.apply(&m.decode_vertices(&code, Some(g)).unwrap()).unwrap();
        let (p0, p5, p1) = (at(0.0), at(0.5), at(1.0));
        let mid: Vec<Vec3> = p0.iter().zip(&p1).map(|(a, b)| (a + b) * 0.5).collect();
        assert!(max_diff(&mid, &p5) < 1e-9);
        // the full output goes through the nonlinear decoder: continuous, not affine
        let full = |g: f64| m.decode_vertices(&code, Some(g)).unwrap();
        assert!(max_diff(&full(0.5), &full(0.5 + 1e-7)) < 1e-5);
        assert!(matches!(m.decode_vertices(&code, Some(1.5)), Err(LatentError::InvalidGamma(_))));
    }

    #[test]
    fn interpolation_endpoints_and_flags() {
        let m = model(5, 5, 1.0);
        let a = &m.training_codes()[0];
        let b = &m.training_codes()[5];
        let fa = m.decode_features(a, None).unwrap();
        let f00 = m.decode_features(&interpolate_codes(a, b, 0.0, 0.0).value, None).unwrap();
        assert!(fa.low.iter().zip(&f00.low).all(|(x, y)| (x - y).abs() < 1e-9));
        assert!(interpolate_codes(a, b, 1.2, 0.5).extrapolated);
        assert!(!interpolate_codes(a, b, 1.0, 0.5).extrapolated);

        let ds = &fixture().dataset;
        let (ma, mb) = (ds.mesh(0).unwrap(), ds.mesh(1).unwrap());
        assert!(interpolate_vertex(&ma, &mb, 0.0).unwrap().value == ma);
        assert!(interpolate_vertex(&ma, &mb, 1.0).unwrap().value.vertices() == mb.vertices());
        let half = interpolate_vertex(&ma, &ma, 0.5).unwrap().value;
        assert!(max_diff(half.vertices(), ma.vertices()) == 0.0);
        assert!(interpolate_vertex(&ma, &mb, -0.1).unwrap().extrapolated);
    }

    #[test]
    fn code_validation() {
        let m = model(3, 3, 1.0);
        let bad = LatentCode {
            z_low: vec![0.0; 2],
            z_high: vec![0.0; 3],
        };
        assert!(matches!(m.decode_vertices(&bad, None), Err(LatentError::DimensionMismatch { what: "z_low", .. })));
        let nan = LatentCode {
            z_low: vec![f64::NAN; 3],
            z_high: vec![0.0; 3],
        };
        assert!(matches!(m.decode_vertices(&nan, None), Err(LatentError::NonFinite { .. })));
        let f = fixture();
        assert!(matches!(
            LatentModel::fit(&f.dataset, f.basis.clone(), &FitConfig { d_low: 0, d_high: 1, gamma: 0.0 }),
            Err(LatentError::ZeroDimension)
        ));
    }
}
