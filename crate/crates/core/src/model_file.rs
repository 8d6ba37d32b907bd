//! Single-file model container.
//!
//! Layout: magic `SPMD`, `u32` format version, `u64` manifest length, the
//! JSON manifest, then raw little-endian blobs. Each blob is listed in the
//! manifest with its offset (relative to the end of the manifest), length
//! and element type. Writing is deterministic: the same model always gives
//! the same bytes.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dr::{DrCodec, DrError};
use crate::latent::{LatentCode, LatentModel, PcaBand};
use crate::mesh::{MeshError, TriangleMesh, Vec3};
use crate::spectral::{BandProjector, SpectralBasis, SpectralError};
use crate::stats::{FeatureStats, StatsError, StatsMode};

pub const MAGIC: &[u8; 4] = b"SPMD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dr(#[from] DrError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    U64,
    Bytes,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct BlobEntry {
    name: String,
    dtype: Dtype,
    offset: u64,
    len: u64,
    shape: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct DrStatsManifest {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Manifest {
    format_version: u32,
    connectivity_hash: String,
    n_vertices: usize,
    n_faces: usize,
    k: usize,
    d_low: usize,
    d_high: usize,
    gamma: f64,
    scale: f64,
    low_stats_mode: StatsMode,
    high_stats_mode: StatsMode,
    high_stats: DrStatsManifest,
    subjects: Vec<String>,
    warnings: Vec<String>,
    blobs: Vec<BlobEntry>,
}

#[derive(Default)]
struct BlobWriter {
    entries: Vec<BlobEntry>,
    data: Vec<u8>,
}

impl BlobWriter {
    fn push_f64(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = f64>) {
        let start = self.data.len();
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
        self.finish(name, Dtype::F64, shape, start);
    }

    fn push_u64(&mut self, name: &str, shape: &[usize], values: impl IntoIterator<Item = u64>) {
        let start = self.data.len();
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
        self.finish(name, Dtype::U64, shape, start);
    }

    fn push_bytes(&mut self, name: &str, bytes: &[u8]) {
        let start = self.data.len();
        self.data.extend_from_slice(bytes);
        self.finish(name, Dtype::Bytes, &[bytes.len()], start);
    }

    fn push_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.push_f64(name, &[m.nrows(), m.ncols()], m.as_slice().iter().copied());
    }

    fn finish(&mut self, name: &str, dtype: Dtype, shape: &[usize], start: usize) {
        self.entries.push(BlobEntry {
            name: name.to_string(),
            dtype,
            offset: start as u64,
            len: (self.data.len() - start) as u64,
            shape: shape.iter().map(|&s| s as u64).collect(),
        });
    }
}

struct BlobReader<'a> {
    entries: &'a [BlobEntry],
    data: &'a [u8],
}

impl<'a> BlobReader<'a> {
    fn entry(&self, name: &str, dtype: Dtype) -> Result<(&'a BlobEntry, &'a [u8]), ModelFileError> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ModelFileError::Format(format!("missing blob {name}")))?;
        if e.dtype != dtype {
            return Err(ModelFileError::Format(format!("blob {name} has type {:?}", e.dtype)));
        }
        let start = e.offset as usize;
        let end = start
            .checked_add(e.len as usize)
            .filter(|&end| end <= self.data.len())
            .ok_or_else(|| ModelFileError::Format(format!("blob {name} out of bounds")))?;
        let count: u64 = e.shape.iter().product();
        let width = if dtype == Dtype::Bytes { 1 } else { 8 };
        if count * width != e.len {
            return Err(ModelFileError::Format(format!("blob {name} shape does not match length")));
        }
        Ok((e, &self.data[start..end]))
    }

    fn f64s(&self, name: &str) -> Result<(Vec<u64>, Vec<f64>), ModelFileError> {
        let (e, bytes) = self.entry(name, Dtype::F64)?;
        let v = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((e.shape.clone(), v))
    }

    fn u64s(&self, name: &str) -> Result<Vec<u64>, ModelFileError> {
        let (_, bytes) = self.entry(name, Dtype::U64)?;
        Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn bytes(&self, name: &str) -> Result<&'a [u8], ModelFileError> {
        Ok(self.entry(name, Dtype::Bytes)?.1)
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>, ModelFileError> {
        let (shape, v) = self.f64s(name)?;
        if shape.len() != 2 {
            return Err(ModelFileError::Format(format!("blob {name} is not a matrix")));
        }
        Ok(DMatrix::from_vec(shape[0] as usize, shape[1] as usize, v))
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>, ModelFileError> {
        Ok(self.f64s(name)?.1)
    }
}

fn codes_matrix(codes: &[LatentCode], low: bool) -> DMatrix<f64> {
    let d = codes.first().map_or(0, |c| if low { c.z_low.len() } else { c.z_high.len() });
    DMatrix::from_fn(d, codes.len(), |i, j| if low { codes[j].z_low[i] } else { codes[j].z_high[i] })
}

fn push_band(w: &mut BlobWriter, prefix: &str, band: &PcaBand) {
    w.push_f64(&format!("{prefix}_mean"), &[band.mean.len()], band.mean.iter().copied());
    w.push_matrix(&format!("{prefix}_components"), &band.components);
    w.push_f64(&format!("{prefix}_variance"), &[band.variance.len()], band.variance.iter().copied());
}

fn read_band(r: &BlobReader, prefix: &str) -> Result<PcaBand, ModelFileError> {
    let band = PcaBand {
        mean: r.vector(&format!("{prefix}_mean"))?,
        components: r.matrix(&format!("{prefix}_components"))?,
        variance: r.vector(&format!("{prefix}_variance"))?,
    };
    if band.components.nrows() != band.mean.len() || band.variance.len() != band.components.ncols() {
        return Err(ModelFileError::Format(format!("{prefix} band dimensions disagree")));
    }
    Ok(band)
}

impl LatentModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BlobWriter::default();
        w.push_u64("faces", &[self.faces.len(), 3], self.faces.iter().flatten().map(|&i| i as u64));
        w.push_f64("mean", &[self.mean.len(), 3], self.mean.iter().flat_map(|p| [p.x, p.y, p.z]));
        push_band(&mut w, "low", &self.low);
        push_band(&mut w, "high", &self.high);
        w.push_matrix("cond_high_to_low", &self.cond_high_to_low);
        w.push_matrix("cond_low_to_high", &self.cond_low_to_high);
        w.push_f64("low_stats_mean", &[self.low_stats.first().len()], self.low_stats.first().iter().copied());
        w.push_f64("low_stats_std", &[self.low_stats.second().len()], self.low_stats.second().iter().copied());
        w.push_matrix("training_z_low", &codes_matrix(&self.training_codes, true));
        w.push_matrix("training_z_high", &codes_matrix(&self.training_codes, false));
        w.push_bytes("eigenbasis", &self.basis.to_cache_bytes());

        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            connectivity_hash: format!("{:016x}", self.connectivity_hash()),
            n_vertices: self.n_vertices(),
            n_faces: self.faces.len(),
            k: self.basis.k(),
            d_low: self.d_low(),
            d_high: self.d_high(),
            gamma: self.gamma,
            scale: self.scale,
            low_stats_mode: self.low_stats.mode(),
            high_stats_mode: self.high_stats.mode(),
            high_stats: DrStatsManifest {
                min: self.high_stats.first().to_vec(),
                max: self.high_stats.second().to_vec(),
            },
            subjects: self.subjects.clone(),
            warnings: self.warnings.clone(),
            blobs: w.entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + w.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&w.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        let bad = |m: &str| ModelFileError::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing SPMD magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ModelFileError::Format(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end])?;
        let r = BlobReader {
            entries: &manifest.blobs,
            data: &bytes[json_end..],
        };

        let faces: Vec<[usize; 3]> = r
            .u64s("faces")?
            .chunks_exact(3)
            .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
            .collect();
        let mean: Vec<Vec3> = r.vector("mean")?.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let mean_mesh = TriangleMesh::new(mean.clone(), faces.clone())?;
        let hash = mean_mesh.connectivity_hash();
        if format!("{hash:016x}") != manifest.connectivity_hash {
            return Err(bad("connectivity hash does not match faces"));
        }
        let basis = Arc::new(SpectralBasis::from_cache_bytes(r.bytes("eigenbasis")?, Some(hash))?);
        if basis.n_vertices() != mean.len() {
            return Err(bad("eigenbasis size does not match mesh"));
        }
        let low = read_band(&r, "low")?;
        let high = read_band(&r, "high")?;
        let n = mean.len();
        if low.feature_dim() != 3 * n || high.feature_dim() != 9 * n {
            return Err(bad("band feature sizes do not match mesh"));
        }
        let cond_high_to_low = r.matrix("cond_high_to_low")?;
        let cond_low_to_high = r.matrix("cond_low_to_high")?;
        if cond_high_to_low.shape() != (3 * n, high.dim()) || cond_low_to_high.shape() != (9 * n, low.dim()) {
            return Err(bad("conditioning map shapes disagree"));
        }
        let low_stats = FeatureStats::from_parts(
            manifest.low_stats_mode,
            r.vector("low_stats_mean")?,
            r.vector("low_stats_std")?,
        )?;
        let high_stats =
            FeatureStats::from_parts(manifest.high_stats_mode, manifest.high_stats.min, manifest.high_stats.max)?;
        let z_low = r.matrix("training_z_low")?;
        let z_high = r.matrix("training_z_high")?;
        if z_low.ncols() != z_high.ncols() || z_low.ncols() != manifest.subjects.len() {
            return Err(bad("training code count disagrees with subjects"));
        }
        let training_codes = (0..z_low.ncols())
            .map(|j| LatentCode {
                z_low: z_low.column(j).iter().copied().collect(),
                z_high: z_high.column(j).iter().copied().collect(),
            })
            .collect();
        let codec = DrCodec::new(&mean_mesh)?;
        let low_projector = BandProjector::low(basis.clone());
        Ok(LatentModel {
            faces,
            mean,
            scale: manifest.scale,
            basis,
            low,
            high,
            cond_high_to_low,
            cond_low_to_high,
            gamma: manifest.gamma,
            low_stats,
            high_stats,
            subjects: manifest.subjects,
            training_codes,
            warnings: manifest.warnings,
            mean_mesh,
            codec,
            low_projector,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        let bytes = std::fs::read(path).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MeshDataset;
    use crate::latent::FitConfig;
    use crate::spectral::{compute_basis, SolverOptions};
    use crate::synthetic::{self, DatasetSpec};

    fn small_model() -> LatentModel {
        let raw = synthetic::bumpy_dataset(&DatasetSpec {
            n_shapes: 5,
            subdivisions: 1,
            ..Default::default()
        });
        let ds = MeshDataset::preprocess(&raw).unwrap();
        let basis = Arc::new(compute_basis(&ds.mean_mesh(), 10, &SolverOptions::default()).unwrap());
        LatentModel::fit(
            &ds,
            basis,
            &FitConfig {
                d_low: 3,
                d_high: 3,
                gamma: 0.4,
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let m = small_model();
        let bytes = m.to_bytes();
        let back = LatentModel::from_bytes(&bytes).unwrap();
        assert!(back.to_bytes() == bytes);
        assert_eq!(back.gamma(), 0.4);
        assert_eq!(back.training_codes(), m.training_codes());
        let code = &m.training_codes()[1];
        assert_eq!(back.decode_vertices(code, None).unwrap(), m.decode_vertices(code, None).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.spm");
        m.save(&path).unwrap();
        assert!(std::fs::read(&path).unwrap() == bytes);
        assert!(LatentModel::load(&path).is_ok());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = small_model().to_bytes();
        assert!(LatentModel::from_bytes(&bytes[..10]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(LatentModel::from_bytes(&wrong_magic), Err(ModelFileError::Format(_))));
        assert!(LatentModel::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(LatentModel::from_bytes(&bad_version), Err(ModelFileError::Format(_))));
    }
}
