//! Per-vertex deformation features relative to a reference (mean) mesh.
//!
//! For vertex `i` the local transform `T_i` is the least-squares fit mapping
//! the weighted one-ring edges of the reference onto the deformed ones. It is
//! split by polar decomposition `T_i = R_i S_i` and stored as nine channels:
//! the six upper entries of `S_i - I` followed by the rotation vector of `R_i`.
//!
//! Decoding inverts the encoder exactly: positions are found by minimizing
//! `sum_i tr((T_i(x) - T_i) W_i (T_i(x) - T_i)^T)` where `W_i` is the weighted
//! edge covariance of vertex `i`. That is a sparse SPD system once one vertex
//! per connected component is pinned; the free translation is then fixed by
//! per-component centroids.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Rotation3};
use thiserror::Error;

use crate::laplace::{self, LaplaceError};
use crate::mesh::{TriangleMesh, Vec3};
use crate::sparse::{CsrMatrix, EnvelopeCholesky, SparseError};

pub const CHANNELS: usize = 9;

/// Relative eigenvalue threshold below which a neighborhood is regularized.
const SINGULAR_RATIO: f64 = 1e-9;
/// Edge weights below this fraction of the mean weight are raised to it.
const WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrError {
    #[error("vertex {vertex} has no usable one-ring")]
    SingularNeighborhood { vertex: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value at vertex {vertex}")]
    NonFinite { vertex: usize },
    #[error(transparent)]
    Laplace(#[from] LaplaceError),
    #[error("decode system factorization failed: {0}")]
    Factorization(#[from] SparseError),
}

/// Per-vertex neighbor lists with nonnegative cotangent weights from the
/// reference mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    neighbors: Vec<Vec<(usize, f64)>>,
    clamped: usize,
}

impl EdgeWeights {
    pub fn from_mesh(mesh: &TriangleMesh) -> Result<Self, DrError> {
        let raw = laplace::cotangent_weights(mesh)?;
        let mean = if raw.is_empty() {
            0.0
        } else {
            raw.iter().map(|(_, w)| w.abs()).sum::<f64>() / raw.len() as f64
        };
        let floor = WEIGHT_FLOOR * mean;
        let mut neighbors = vec![Vec::new(); mesh.n_vertices()];
        let mut clamped = 0;
        for ([a, b], w) in raw {
            let w = if w < floor {
                clamped += 1;
                floor
            } else {
                w
            };
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(Self { neighbors, clamped })
    }

    pub fn neighbors(&self, vertex: usize) -> &[(usize, f64)] {
        &self.neighbors[vertex]
    }

    pub fn n_vertices(&self) -> usize {
        self.neighbors.len()
    }

    /// Edges whose weight was raised to the floor (obtuse or degenerate
    /// configurations).
    pub fn clamped_edges(&self) -> usize {
        self.clamped
    }
}

/// Nine channels per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DrFeatures(pub Vec<[f64; CHANNELS]>);

impl DrFeatures {
    pub fn n_vertices(&self) -> usize {
        self.0.len()
    }

    /// Vertex-major flattening, `9 N` values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, DrError> {
        if !flat.len().is_multiple_of(CHANNELS) {
            return Err(DrError::DimensionMismatch {
                expected: flat.len() / CHANNELS * CHANNELS,
                found: flat.len(),
            });
        }
        Ok(Self(
            flat.chunks_exact(CHANNELS)
                .map(|c| c.try_into().expect("chunk of nine"))
                .collect(),
        ))
    }

    /// Features of the undeformed reference.
    pub fn identity(n: usize) -> Self {
        Self(vec![[0.0; CHANNELS]; n])
    }
}

/// `T = R S` with `R` a proper rotation and `S` symmetric.
pub fn polar_decomposition(t: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let svd = t.svd(true, true);
    let mut u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut sigma = svd.singular_values;
    if (u * v_t).determinant() < 0.0 {
        let i = sigma.imin();
        u.column_mut(i).neg_mut();
        sigma[i] = -sigma[i];
    }
    let r = u * v_t;
    let s = v_t.transpose() * Matrix3::from_diagonal(&sigma) * v_t;
    (r, 0.5 * (s + s.transpose()))
}

/// Rotation vector of `r` on the principal branch, angle in `[0, pi]`.
pub fn log_rotation(r: &Matrix3<f64>) -> Vec3 {
    let cos = (r.trace() - 1.0) * 0.5;
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * vee.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-4 {
        // sin(theta)/theta series
        return vee * (0.5 / (1.0 - theta * theta / 6.0));
    }
    if std::f64::consts::PI - theta > 1e-2 {
        return vee * (theta / (2.0 * sin));
    }
    // near pi: sym(R) = cos I + (1 - cos) a a^T
    let aat = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos) / (1.0 - cos);
    let i = (0..3).max_by(|&x, &y| aat[(x, x)].total_cmp(&aat[(y, y)])).unwrap();
    let mut axis: Vec3 = aat.column(i).into_owned().normalize();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

pub fn exp_rotation(omega: &Vec3) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

/// Channel packing of `(S - I, log R)`.
pub fn pack(s: &Matrix3<f64>, r: &Matrix3<f64>) -> [f64; CHANNELS] {
    let w = log_rotation(r);
    [
        s[(0, 0)] - 1.0,
        s[(0, 1)],
        s[(0, 2)],
        s[(1, 1)] - 1.0,
        s[(1, 2)],
        s[(2, 2)] - 1.0,
        w.x,
        w.y,
        w.z,
    ]
}

/// Rebuilds `T = exp(omega) S` from the channels.
pub fn unpack(f: &[f64; CHANNELS]) -> Matrix3<f64> {
    let s = Matrix3::new(
        f[0] + 1.0,
        f[1],
        f[2],
        f[1],
        f[3] + 1.0,
        f[4],
        f[2],
        f[4],
        f[5] + 1.0,
    );
    exp_rotation(&Vec3::new(f[6], f[7], f[8])) * s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DrDiagnostics {
    /// Neighborhoods whose edge covariance needed Tikhonov regularization.
    pub regularized_vertices: usize,
    pub clamped_edges: usize,
}

struct DecodeSystem {
    factor: EnvelopeCholesky,
    /// For each vertex, its index in the reduced system or `None` if pinned.
    reduced: Vec<Option<usize>>,
}

/// Encoder/decoder bound to one reference mesh.
pub struct DrCodec {
    reference: Vec<Vec3>,
    faces_hash: u64,
    weights: EdgeWeights,
    /// Inverse of the regularized edge covariance.
    cov_inv: Vec<Matrix3<f64>>,
    /// Tikhonov amount per vertex (0 when not needed).
    delta: Vec<f64>,
    components: Vec<usize>,
    n_components: usize,
    diagnostics: DrDiagnostics,
    system: OnceLock<Result<DecodeSystem, DrError>>,
}

impl std::fmt::Debug for DrCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DrCodec")
            .field("n_vertices", &self.reference.len())
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

impl DrCodec {
    pub fn new(reference: &TriangleMesh) -> Result<Self, DrError> {
        let weights = EdgeWeights::from_mesh(reference)?;
        let p = reference.vertices();
        let n = p.len();
        let mut cov_inv = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        let mut regularized = 0;
        for i in 0..n {
            let mut w = Matrix3::zeros();
            for &(j, c) in weights.neighbors(i) {
                let e = p[j] - p[i];
                w += c * e * e.transpose();
            }
            let trace = w.trace();
            if !(trace > 0.0) || !trace.is_finite() {
                return Err(DrError::SingularNeighborhood { vertex: i });
            }
            let min_eig = w.symmetric_eigenvalues().min();
            let d = if min_eig < SINGULAR_RATIO * trace {
                regularized += 1;
                if regularized == 1 {
                    log::warn!("vertex {i}: near-planar one-ring, regularizing");
                }
                SINGULAR_RATIO * trace
            } else {
                0.0
            };
            let w = w + Matrix3::identity() * d;
            let inv = w.try_inverse().ok_or(DrError::SingularNeighborhood { vertex: i })?;
            cov_inv.push(inv);
            delta.push(d);
        }
        let components = reference.components();
        let n_components = components.iter().max().map_or(0, |m| m + 1);
        let diagnostics = DrDiagnostics {
            regularized_vertices: regularized,
            clamped_edges: weights.clamped_edges(),
        };
        Ok(Self {
            reference: p.to_vec(),
            faces_hash: reference.connectivity_hash(),
            weights,
            cov_inv,
            delta,
            components,
            n_components,
            diagnostics,
            system: OnceLock::new(),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.reference.len()
    }

    pub fn connectivity_hash(&self) -> u64 {
        self.faces_hash
    }

    pub fn diagnostics(&self) -> DrDiagnostics {
        self.diagnostics
    }

    pub fn weights(&self) -> &EdgeWeights {
        &self.weights
    }

    fn check_len(&self, found: usize) -> Result<(), DrError> {
        if found != self.n_vertices() {
            return Err(DrError::DimensionMismatch {
                expected: self.n_vertices(),
                found,
            });
        }
        Ok(())
    }

    /// Local transform of vertex `i` for the deformed positions `q`.
    pub fn local_transform(&self, q: &[Vec3], i: usize) -> Matrix3<f64> {
        let p = &self.reference;
        let mut d = Matrix3::identity() * self.delta[i];
        for &(j, c) in self.weights.neighbors(i) {
            d += c * (q[j] - q[i]) * (p[j] - p[i]).transpose();
        }
        d * self.cov_inv[i]
    }

    pub fn encode(&self, deformed: &[Vec3]) -> Result<DrFeatures, DrError> {
        self.check_len(deformed.len())?;
        if let Some(v) = deformed.iter().position(|q| !q.iter().all(|x| x.is_finite())) {
            return Err(DrError::NonFinite { vertex: v });
        }
        let features = (0..self.n_vertices())
            .map(|i| {
                let (r, s) = polar_decomposition(&self.local_transform(deformed, i));
                pack(&s, &r)
            })
            .collect();
        Ok(DrFeatures(features))
    }

    fn system(&self) -> Result<&DecodeSystem, DrError> {
        self.system
            .get_or_init(|| self.build_system())
            .as_ref()
            .map_err(|e| e.clone())
    }

    fn build_system(&self) -> Result<DecodeSystem, DrError> {
        let n = self.n_vertices();
        let p = &self.reference;
        let mut triplets = Vec::new();
        let mut rows: Vec<(usize, Vec3)> = Vec::new();
        for i in 0..n {
            rows.clear();
            let mut center = Vec3::zeros();
            for &(j, c) in self.weights.neighbors(i) {
                let e = c * (p[j] - p[i]);
                rows.push((j, e));
                center -= e;
            }
            rows.push((i, center));
            let y = &self.cov_inv[i];
            for &(u, bu) in &rows {
                let yb = y * bu;
                for &(v, bv) in &rows {
                    triplets.push((u, v, yb.dot(&bv)));
                }
            }
        }
        let k = CsrMatrix::from_triplets(n, triplets);
        let mut pinned = vec![false; self.n_components];
        let mut reduced = vec![None; n];
        let mut keep = Vec::with_capacity(n);
        for v in 0..n {
            let c = self.components[v];
            if !pinned[c] {
                pinned[c] = true;
            } else {
                reduced[v] = Some(keep.len());
                keep.push(v);
            }
        }
        let factor = EnvelopeCholesky::factor(&k.submatrix(&keep))?;
        Ok(DecodeSystem { factor, reduced })
    }

    /// Positions whose features are `features`, with every connected
    /// component's vertex centroid placed at the reference's.
    pub fn decode(&self, features: &DrFeatures) -> Result<Vec<Vec3>, DrError> {
        let targets = self.component_centroids(&self.reference);
        self.decode_with_centroids(features, &targets)
    }

    /// Per-component vertex centroids of `points`.
    pub fn component_centroids(&self, points: &[Vec3]) -> Vec<Vec3> {
        let mut sum = vec![Vec3::zeros(); self.n_components];
        let mut count = vec![0usize; self.n_components];
        for (p, &c) in points.iter().zip(&self.components) {
            sum[c] += p;
            count[c] += 1;
        }
        sum.iter().zip(&count).map(|(s, &n)| s / n.max(1) as f64).collect()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn decode_with_centroids(&self, features: &DrFeatures, centroids: &[Vec3]) -> Result<Vec<Vec3>, DrError> {
        self.check_len(features.n_vertices())?;
        if centroids.len() != self.n_components {
            return Err(DrError::DimensionMismatch {
                expected: self.n_components,
                found: centroids.len(),
            });
        }
        if let Some(v) = features.0.iter().position(|f| !f.iter().all(|x| x.is_finite())) {
            return Err(DrError::NonFinite { vertex: v });
        }
        let sys = self.system()?;
        let n = self.n_vertices();
        let p = &self.reference;
        // rhs[node] = B_i[node, :] . H_i[a, :] with H_i = T_i - delta_i W_i^-1
        let mut rhs = vec![Vec3::zeros(); n];
        for i in 0..n {
            let h = unpack(&features.0[i]) - self.cov_inv[i] * self.delta[i];
            let mut center = Vec3::zeros();
            for &(j, c) in self.weights.neighbors(i) {
                let e = c * (p[j] - p[i]);
                rhs[j] += h * e;
                center -= e;
            }
            rhs[i] += h * center;
        }
        let m = sys.factor.dim();
        let mut x = vec![Vec3::zeros(); n];
        for a in 0..3 {
            let mut b = vec![0.0; m];
            for v in 0..n {
                if let Some(r) = sys.reduced[v] {
                    b[r] = rhs[v][a];
                }
            }
            let sol = sys.factor.solve(&b)?;
            for v in 0..n {
                if let Some(r) = sys.reduced[v] {
                    x[v][a] = sol[r];
                }
            }
        }
        let current = self.component_centroids(&x);
        for (xv, &c) in x.iter_mut().zip(&self.components) {
            *xv += centroids[c] - current[c];
        }
        Ok(x)
    }
}

/// One-shot encode against `reference`.
pub fn encode_dr(reference: &TriangleMesh, deformed: &[Vec3]) -> Result<DrFeatures, DrError> {
    DrCodec::new(reference)?.encode(deformed)
}

/// One-shot decode against `reference`.
pub fn decode_dr(reference: &TriangleMesh, features: &DrFeatures) -> Result<Vec<Vec3>, DrError> {
    DrCodec::new(reference)?.decode(features)
}
