//! Generalized eigenproblem `S u = lambda M u` for the smoothest modes, band
//! projectors built from eigenvector subsets, two-band decomposition and band
//! reassembly.
//!
//! The eigensolver is shift-invert block Lanczos with full
//! reorthogonalization in the `M` inner product: `S + |sigma| M` is factored
//! once by sparse Cholesky, block Krylov vectors of `(S + |sigma| M)^-1 M` are
//! kept `M`-orthonormal, and Ritz pairs come from the Rayleigh quotient of `S`
//! on that subspace. Blocks (rather than one vector) are needed because
//! symmetric meshes have repeated eigenvalues, which a single Krylov sequence
//! cannot resolve.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::MeshDataset;
use crate::laplace::{self, LaplaceError, MassMatrix};
use crate::mesh::{TriangleMesh, Vec3};
use crate::sparse::{CsrMatrix, EnvelopeCholesky, SparseError, SparseSymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigensolver did not converge: {converged} of {requested} pairs within {iterations} basis vectors")]
    ConvergenceFailure {
        converged: usize,
        requested: usize,
        iterations: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid mode count k = {k} for dimension {n}")]
    InvalidK { k: usize, n: usize },
    #[error("connectivity mismatch: basis bound to {expected:#018x}, mesh has {found:#018x}")]
    ConnectivityMismatch { expected: u64, found: u64 },
    #[error("shifted stiffness factorization failed: {0}")]
    Factorization(#[from] SparseError),
    #[error(transparent)]
    Laplace(#[from] LaplaceError),
    #[error("invalid band split: {0}")]
    InvalidBandSplit(String),
    #[error("projectors do not share one basis")]
    MixedBases,
    #[error("invalid eigenbasis cache: {0}")]
    Cache(String),
}

/// Default number of modes: 500, or `N / 4` when the mesh has fewer than
/// 1000 vertices.
pub fn default_k(n_vertices: usize) -> usize {
    if n_vertices < 2 * 500 {
        (n_vertices / 4).max(1)
    } else {
        500
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Magnitude of the negative shift; `S + shift * M` is factored.
    pub shift: f64,
    /// Relative residual tolerance for accepting a Ritz pair.
    pub tolerance: f64,
    pub block_size: usize,
    /// Basis-size cap as a multiple of `k`.
    pub iteration_factor: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            shift: 1e-8,
            tolerance: 1e-8,
            block_size: 8,
            iteration_factor: 30,
            seed: 42,
        }
    }
}

/// The first `k` eigenpairs, `M`-orthonormal, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    mass: MassMatrix,
    connectivity_hash: u64,
}

impl SpectralBasis {
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<f64>,
        mass: MassMatrix,
        connectivity_hash: u64,
    ) -> Result<Self, SpectralError> {
        let (n, k) = eigenvectors.shape();
        if eigenvalues.len() != k {
            return Err(SpectralError::DimensionMismatch {
                expected: k,
                found: eigenvalues.len(),
            });
        }
        if mass.dim() != n {
            return Err(SpectralError::DimensionMismatch {
                expected: n,
                found: mass.dim(),
            });
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            mass,
            connectivity_hash,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `N x k`, one eigenvector per column.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn mass(&self) -> &MassMatrix {
        &self.mass
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn connectivity_hash(&self) -> u64 {
        self.connectivity_hash
    }

    pub fn with_connectivity(mut self, hash: u64) -> Self {
        self.connectivity_hash = hash;
        self
    }

    pub fn check_connectivity(&self, hash: u64) -> Result<(), SpectralError> {
        if hash != self.connectivity_hash {
            return Err(SpectralError::ConnectivityMismatch {
                expected: self.connectivity_hash,
                found: hash,
            });
        }
        Ok(())
    }

    /// Serializes to the little-endian eigenbasis cache layout: magic
    /// `DSMB`, version `u32 = 1`, `N u64`, `k u64`, hash `u64`, `k`
    /// eigenvalues, `N * k` eigenvector entries column-major, `N` mass entries.
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let (n, k) = self.eigenvectors.shape();
        let mut out = Vec::with_capacity(32 + 8 * (k + n * k + n));
        out.extend_from_slice(b"DSMB");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(k as u64).to_le_bytes());
        out.extend_from_slice(&self.connectivity_hash.to_le_bytes());
        for v in &self.eigenvalues {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.eigenvectors.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.mass.diagonal() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a cache, rejecting it when `expected_hash` is given and differs.
    pub fn from_cache_bytes(bytes: &[u8], expected_hash: Option<u64>) -> Result<Self, SpectralError> {
        let bad = |m: &str| SpectralError::Cache(m.to_string());
        if bytes.len() < 32 || &bytes[..4] != b"DSMB" {
            return Err(bad("missing DSMB magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(SpectralError::Cache(format!("unsupported version {version}")));
        }
        let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let n = read_u64(8) as usize;
        let k = read_u64(16) as usize;
        let hash = read_u64(24);
        if let Some(expected) = expected_hash {
            if expected != hash {
                return Err(SpectralError::ConnectivityMismatch {
                    expected,
                    found: hash,
                });
            }
        }
        let count = k
            .checked_mul(n)
            .and_then(|nk| nk.checked_add(k + n))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != 32 + 8 * count {
            return Err(bad("length does not match header"));
        }
        let floats: Vec<f64> = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let eigenvalues = floats[..k].to_vec();
        let eigenvectors = DMatrix::from_column_slice(n, k, &floats[k..k + n * k]);
        let mass = MassMatrix::from_diagonal(floats[k + n * k..].to_vec());
        Self::from_parts(eigenvalues, eigenvectors, mass, hash)
    }
}

/// Cotangent stiffness and mass of `mesh`, then the first `k` modes, bound to
/// the mesh connectivity.
pub fn compute_basis(mesh: &TriangleMesh, k: usize, opts: &SolverOptions) -> Result<SpectralBasis, SpectralError> {
    let stiffness = laplace::cotangent_laplacian(mesh)?;
    let mass = laplace::mass_matrix(mesh)?;
    Ok(solve_spectrum(&stiffness, &mass, k, opts)?.with_connectivity(mesh.connectivity_hash()))
}

fn m_dot(a: &[f64], mb: &[f64]) -> f64 {
    a.iter().zip(mb).map(|(x, y)| x * y).sum()
}

fn scale_by(d: &[f64], v: &[f64]) -> Vec<f64> {
    d.iter().zip(v).map(|(a, b)| a * b).collect()
}

struct Krylov<'a> {
    mass: &'a [f64],
    stiffness: &'a CsrMatrix,
    basis: Vec<Vec<f64>>,
    m_basis: Vec<Vec<f64>>,
    /// Rayleigh quotient `V^T S V`, grown one column at a time.
    h: Vec<Vec<f64>>,
}

impl<'a> Krylov<'a> {
    fn new(mass: &'a [f64], stiffness: &'a CsrMatrix) -> Self {
        Self {
            mass,
            stiffness,
            basis: Vec::new(),
            m_basis: Vec::new(),
            h: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.basis.len()
    }

    /// M-orthogonalizes `v` against the basis (two passes) and appends it.
    /// Returns false when `v` lies numerically inside the current span.
    fn push(&mut self, mut v: Vec<f64>) -> bool {
        let norm0 = m_dot(&v, &scale_by(self.mass, &v)).sqrt();
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return false;
        }
        for _ in 0..2 {
            for (q, mq) in self.basis.iter().zip(&self.m_basis) {
                let c = m_dot(&v, mq);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let mv = scale_by(self.mass, &v);
        let norm = m_dot(&v, &mv).sqrt();
        if !(norm > 1e-10 * norm0) {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let mv: Vec<f64> = mv.into_iter().map(|x| x / norm).collect();
        let sv = self.stiffness.mul_vec(&v);
        let col: Vec<f64> = self.basis.iter().map(|q| m_dot(q, &sv)).collect();
        let diag = m_dot(&v, &sv);
        for (row, c) in self.h.iter_mut().zip(&col) {
            row.push(*c);
        }
        let mut new_row = col;
        new_row.push(diag);
        self.h.push(new_row);
        self.basis.push(v);
        self.m_basis.push(mv);
        true
    }

    /// Ritz values (ascending) and coefficient vectors.
    fn ritz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.len();
        let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (self.h[i][j] + self.h[j][i]));
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    fn combine(&self, coeffs: &DMatrix<f64>, col: usize) -> Vec<f64> {
        let n = self.mass.len();
        let mut u = vec![0.0; n];
        for (q, &c) in self.basis.iter().zip(coeffs.column(col).iter()) {
            for (x, y) in u.iter_mut().zip(q) {
                *x += c * y;
            }
        }
        u
    }
}

/// Smallest `k` eigenpairs of `S u = lambda M u`.
pub fn solve_spectrum(
    stiffness: &SparseSymMatrix,
    mass: &MassMatrix,
    k: usize,
    opts: &SolverOptions,
) -> Result<SpectralBasis, SpectralError> {
    let n = stiffness.dim();
    if mass.dim() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            found: mass.dim(),
        });
    }
    if k == 0 || k > n {
        return Err(SpectralError::InvalidK { k, n });
    }
    let s = stiffness.to_csr();
    let shifted = s.add_diagonal(opts.shift.abs(), mass.diagonal());
    let factor = EnvelopeCholesky::factor(&shifted)?;

    let mut last_err = None;
    for attempt in 0..2u64 {
        match krylov_solve(&s, mass, &factor, k, opts, opts.seed.wrapping_add(attempt)) {
            Ok((values, vectors)) => {
                return SpectralBasis::from_parts(values, vectors, mass.clone(), 0);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

fn krylov_solve(
    s: &CsrMatrix,
    mass: &MassMatrix,
    factor: &EnvelopeCholesky,
    k: usize,
    opts: &SolverOptions,
    seed: u64,
) -> Result<(Vec<f64>, DMatrix<f64>), SpectralError> {
    let n = s.dim();
    let m_diag = mass.diagonal();
    let block = opts.block_size.clamp(1, n);
    let cap = (opts.iteration_factor.max(1) * k).max(k + 2 * block).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let mut kry = Krylov::new(m_diag, s);
    // start block: shift-invert images of random vectors
    let mut frontier: Vec<Vec<f64>> = Vec::new();
    while frontier.len() < block && kry.len() < cap {
        let v = factor.solve(&scale_by(m_diag, &random_vec(&mut rng)))?;
        if kry.push(v) {
            frontier.push(kry.basis.last().unwrap().clone());
        }
    }

    let mut next_check = (k + block).min(cap);
    let mut converged;
    let mut stalled = false;
    loop {
        if kry.len() >= next_check || kry.len() >= cap || stalled {
            let (values, coeffs) = kry.ritz();
            let mut vectors = DMatrix::<f64>::zeros(n, k);
            converged = 0;
            for j in 0..k {
                let u = kry.combine(&coeffs, j);
                let lambda = values[j];
                let su = s.mul_vec(&u);
                let mu = scale_by(m_diag, &u);
                let r: f64 = su
                    .iter()
                    .zip(&mu)
                    .map(|(a, b)| (a - lambda * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let mu_norm = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r <= opts.tolerance * mu_norm * lambda.abs().max(1.0) {
                    converged += 1;
                } else if kry.len() < n {
                    break;
                }
                vectors.set_column(j, &nalgebra::DVector::from_vec(u));
            }
            if converged == k || kry.len() >= n {
                let values: Vec<f64> = values[..k].iter().map(|v| v.max(0.0)).collect();
                canonicalize_signs(&mut vectors);
                return Ok((values, vectors));
            }
            if kry.len() >= cap || stalled {
                return Err(SpectralError::ConvergenceFailure {
                    converged,
                    requested: k,
                    iterations: kry.len(),
                });
            }
            next_check = (kry.len() + block.max(kry.len() / 8)).min(cap);
        }

        let mut new_frontier = Vec::with_capacity(block);
        for v in &frontier {
            if kry.len() >= cap {
                break;
            }
            let w = factor.solve(&scale_by(m_diag, v))?;
            if kry.push(w) {
                new_frontier.push(kry.basis.last().unwrap().clone());
            }
        }
        // exhausted directions (invariant subspace): refill with fresh vectors
        let mut tries = 0;
        while new_frontier.len() < block && kry.len() < cap && tries < 4 * block {
            tries += 1;
            let v = factor.solve(&scale_by(m_diag, &random_vec(&mut rng)))?;
            if kry.push(v) {
                new_frontier.push(kry.basis.last().unwrap().clone());
            }
        }
        if new_frontier.is_empty() {
            stalled = true;
            next_check = kry.len();
        }
        frontier = new_frontier;
    }
}

/// Makes the first clearly nonzero component of every column positive.
fn canonicalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-8 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Disjoint ordered ranges of eigenvector indices covering `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandSplit {
    ranges: Vec<Range<usize>>,
}

impl BandSplit {
    pub fn new(ranges: Vec<Range<usize>>, k: usize) -> Result<Self, SpectralError> {
        let mut expect = 0;
        for r in &ranges {
            if r.start != expect || r.end <= r.start {
                return Err(SpectralError::InvalidBandSplit(format!(
                    "range {r:?} does not continue a partition at {expect}"
                )));
            }
            expect = r.end;
        }
        if expect != k {
            return Err(SpectralError::InvalidBandSplit(format!(
                "ranges cover [0, {expect}) instead of [0, {k})"
            )));
        }
        Ok(Self { ranges })
    }

    /// The default split: all `k` modes form the low band; the high band is
    /// the complement of their span.
    pub fn two_band(k: usize) -> Self {
        Self { ranges: vec![0..k] }
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }
}

/// Which subspace a projector maps onto.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Band {
    /// `span(U_range)`, projector `U_r U_r^T M`.
    Modes(Range<usize>),
    /// Complement of all `k` modes, projector `I - U U^T M`.
    Complement,
}

#[derive(Debug, Clone)]
pub struct BandProjector {
    basis: Arc<SpectralBasis>,
    band: Band,
    materialized: Option<DMatrix<f64>>,
}

impl BandProjector {
    pub fn new(basis: Arc<SpectralBasis>, band: Band) -> Result<Self, SpectralError> {
        if let Band::Modes(r) = &band {
            if r.start >= r.end || r.end > basis.k() {
                return Err(SpectralError::InvalidBandSplit(format!(
                    "range {r:?} outside [0, {})",
                    basis.k()
                )));
            }
        }
        Ok(Self {
            basis,
            band,
            materialized: None,
        })
    }

    /// `X = U U^T M` over all `k` modes.
    pub fn low(basis: Arc<SpectralBasis>) -> Self {
        let k = basis.k();
        Self::new(basis, Band::Modes(0..k)).expect("full range is valid")
    }

    /// `I - X`.
    pub fn high(basis: Arc<SpectralBasis>) -> Self {
        Self::new(basis, Band::Complement).expect("complement is valid")
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn band(&self) -> &Band {
        &self.band
    }

    pub fn is_materialized(&self) -> bool {
        self.materialized.is_some()
    }

    /// Dense `N x N` projector table, for repeated batch application.
    pub fn materialize(&mut self) {
        if self.materialized.is_some() {
            return;
        }
        let n = self.basis.n_vertices();
        let (u, complement) = match &self.band {
            Band::Modes(r) => (self.basis.eigenvectors.columns(r.start, r.len()), false),
            Band::Complement => (self.basis.eigenvectors.columns(0, self.basis.k()), true),
        };
        let mut um = u.transpose();
        for (mut col, &m) in um.column_iter_mut().zip(self.basis.mass.diagonal()) {
            col *= m;
        }
        let mut x = &u * um;
        if complement {
            x.neg_mut();
            for i in 0..n {
                x[(i, i)] += 1.0;
            }
        }
        self.materialized = Some(x);
    }

    pub fn materialized(&self) -> Option<&DMatrix<f64>> {
        self.materialized.as_ref()
    }

    /// Applies the projector; factor-wise `U_r (U_r^T (M s))` unless a dense
    /// table was materialized.
    pub fn apply(&self, signal: &[Vec3]) -> Result<Vec<Vec3>, SpectralError> {
        let n = self.basis.n_vertices();
        if signal.len() != n {
            return Err(SpectralError::DimensionMismatch {
                expected: n,
                found: signal.len(),
            });
        }
        let s = DMatrix::from_fn(n, 3, |i, c| signal[i][c]);
        let out = if let Some(x) = &self.materialized {
            x * &s
        } else {
            let range = match &self.band {
                Band::Modes(r) => r.clone(),
                Band::Complement => 0..self.basis.k(),
            };
            let u = self.basis.eigenvectors.columns(range.start, range.len());
            let ms = DMatrix::from_fn(n, 3, |i, c| self.basis.mass.diagonal()[i] * signal[i][c]);
            let coeffs = u.transpose() * ms;
            let low = u * coeffs;
            match &self.band {
                Band::Modes(_) => low,
                Band::Complement => s - low,
            }
        };
        Ok((0..n).map(|i| Vec3::new(out[(i, 0)], out[(i, 1)], out[(i, 2)])).collect())
    }
}

/// Projector application as a free function.
pub fn project_band(projector: &BandProjector, signal: &[Vec3]) -> Result<Vec<Vec3>, SpectralError> {
    projector.apply(signal)
}

/// `(X d + mean, (I - X) d + mean)` for `d = shape - mean`.
pub fn decompose_vertices(
    low: &BandProjector,
    mean: &[Vec3],
    shape: &[Vec3],
) -> Result<(Vec<Vec3>, Vec<Vec3>), SpectralError> {
    if shape.len() != mean.len() {
        return Err(SpectralError::DimensionMismatch {
            expected: mean.len(),
            found: shape.len(),
        });
    }
    let d: Vec<Vec3> = shape.iter().zip(mean).map(|(p, m)| p - m).collect();
    let xd = low.apply(&d)?;
    let p_low = xd.iter().zip(mean).map(|(a, m)| a + m).collect();
    let p_high = d.iter().zip(&xd).zip(mean).map(|((a, b), m)| (a - b) + m).collect();
    Ok((p_low, p_high))
}

/// Splits dataset shape `index` into its low band `X P^ + P-bar` and high
/// band `(I - X) P^ + P-bar`.
pub fn decompose_two_band(
    dataset: &MeshDataset,
    basis: &Arc<SpectralBasis>,
    index: usize,
) -> Result<(Vec<Vec3>, Vec<Vec3>), SpectralError> {
    basis.check_connectivity(dataset.connectivity_hash())?;
    let shape = dataset.shape(index).map_err(|_| SpectralError::DimensionMismatch {
        expected: dataset.n_shapes(),
        found: index,
    })?;
    decompose_vertices(&BandProjector::low(basis.clone()), dataset.mean_vertices(), shape)
}

/// Sum of projected band signals. With the default split this is
/// `(I - X) P'_high + X P'_low`.
pub fn assemble(bands: &[(&BandProjector, &[Vec3])]) -> Result<Vec<Vec3>, SpectralError> {
    let Some((first, _)) = bands.first() else {
        return Ok(Vec::new());
    };
    let n = first.basis.n_vertices();
    let mut out = vec![Vec3::zeros(); n];
    for (proj, signal) in bands {
        if !Arc::ptr_eq(&proj.basis, &first.basis) && *proj.basis != *first.basis {
            return Err(SpectralError::MixedBases);
        }
        for (o, p) in out.iter_mut().zip(proj.apply(signal)?) {
            *o += p;
        }
    }
    Ok(out)
}

/// `P'_high + X (P'_low - P'_high)`, the two-band assembly.
pub fn assemble_two_band(
    low: &BandProjector,
    p_low: &[Vec3],
    p_high: &[Vec3],
) -> Result<Vec<Vec3>, SpectralError> {
    if p_low.len() != p_high.len() {
        return Err(SpectralError::DimensionMismatch {
            expected: p_low.len(),
            found: p_high.len(),
        });
    }
    let diff: Vec<Vec3> = p_low.iter().zip(p_high).map(|(a, b)| a - b).collect();
    let xd = low.apply(&diff)?;
    Ok(p_high.iter().zip(xd).map(|(h, x)| h + x).collect())
}
