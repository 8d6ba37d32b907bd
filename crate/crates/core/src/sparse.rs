//! Sparse symmetric matrices and an envelope (profile) Cholesky solver with
//! reverse Cuthill-McKee reordering.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("index ({row}, {col}) out of range for dimension {dim}")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("triplet text parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Whether stored values are the Laplacian `L` as written (negative
/// semidefinite) or the stiffness `S = -L` (positive semidefinite).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConvention {
    Laplacian,
    Stiffness,
}

/// Symmetric matrix stored as its upper triangle (`row <= col`), sorted by
/// `(row, col)` with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
    convention: SignConvention,
}

impl SparseSymMatrix {
    /// Builds from arbitrary triplets; `(i, j)` and `(j, i)` address the same
    /// entry and duplicates are summed in sorted order.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        convention: SignConvention,
    ) -> Result<Self, SparseError> {
        let mut raw: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(SparseError::IndexOutOfRange { row: r, col: c, dim });
            }
            raw.push((r.min(c), r.max(c), v));
        }
        raw.sort_by_key(|a| (a.0, a.1));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (r, c, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        Ok(Self {
            dim,
            entries,
            convention,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn convention(&self) -> SignConvention {
        self.convention
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let key = (row.min(col), row.max(col));
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .map_or(0.0, |i| self.entries[i].2)
    }

    /// `-A`, with the convention flag flipped.
    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, -v)).collect(),
            convention: match self.convention {
                SignConvention::Laplacian => SignConvention::Stiffness,
                SignConvention::Stiffness => SignConvention::Laplacian,
            },
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(2 * self.entries.len());
        for &(r, c, v) in &self.entries {
            triplets.push((r, c, v));
            if r != c {
                triplets.push((c, r, v));
            }
        }
        CsrMatrix::from_sorted_unique(self.dim, triplets)
    }

    /// `"N nnz"` header, then one `"row col value"` line per stored entry.
    pub fn to_triplet_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dim, self.entries.len());
        for &(r, c, v) in &self.entries {
            let _ = writeln!(out, "{r} {c} {v:?}");
        }
        out
    }

    pub fn from_triplet_text(text: &str, convention: SignConvention) -> Result<Self, SparseError> {
        let perr = |line: usize, message: &str| SparseError::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header"))?;
        let mut h = header.split_whitespace();
        let dim: usize = h
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(1, "bad dimension"))?;
        let nnz: usize = h
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(1, "bad nnz"))?;
        let mut triplets = Vec::with_capacity(nnz);
        for (ln, line) in lines {
            let mut t = line.split_whitespace();
            let r = t.next().and_then(|x| x.parse().ok());
            let c = t.next().and_then(|x| x.parse().ok());
            let v = t.next().and_then(|x| x.parse().ok());
            match (r, c, v) {
                (Some(r), Some(c), Some(v)) => triplets.push((r, c, v)),
                _ => return Err(perr(ln + 1, "expected \"row col value\"")),
            }
        }
        if triplets.len() != nnz {
            return Err(perr(1, "entry count does not match header"));
        }
        Self::from_triplets(dim, triplets, convention)
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets with duplicates summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        Self::from_sorted_unique(dim, merged)
    }

    fn from_sorted_unique(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = triplets.iter().map(|t| t.1).collect();
        let vals = triplets.iter().map(|t| t.2).collect();
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `self + alpha * diag(d)`.
    pub fn add_diagonal(&self, alpha: f64, d: &[f64]) -> CsrMatrix {
        let mut triplets: Vec<(usize, usize, f64)> = (0..self.dim)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect();
        triplets.extend(d.iter().enumerate().map(|(i, &v)| (i, i, alpha * v)));
        CsrMatrix::from_triplets(self.dim, triplets)
    }

    /// Principal submatrix keeping `keep` (ascending indices).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.dim];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    triplets.push((new_i, map[j], v));
                }
            }
        }
        CsrMatrix::from_sorted_unique(keep.len(), triplets)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (farthest node with min degree on the last level, depth)
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut q = VecDeque::from([start]);
        let mut last = start;
        while let Some(u) = q.pop_front() {
            last = u;
            for &v in &adj[u] {
                if !visited[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        let depth = dist[last];
        let far = (0..n)
            .filter(|&v| dist[v] == depth)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(last);
        (far, depth)
    };

    loop {
        let Some(seed) = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree[v], v)) else {
            break;
        };
        // pseudo-peripheral start node
        let mut start = seed;
        let (mut far, mut depth) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let (far2, depth2) = bfs_levels(far, &visited);
            if depth2 <= depth {
                break;
            }
            start = far;
            far = far2;
            depth = depth2;
        }
        let begin = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = begin;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                order.push(v);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A P^T = L L^T` stored by rows over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    dim: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SparseError> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, _) in a.row(old_i) {
                let new_j = inv_perm[old_j];
                if new_j < first[new_i] {
                    first[new_i] = new_j;
                }
            }
        }
        let mut row_start = vec![0usize; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + (i - first[i] + 1);
        }
        let mut values = vec![0.0; row_start[n]];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, v) in a.row(old_i) {
                let new_j = inv_perm[old_j];
                if new_j <= new_i {
                    values[row_start[new_i] + new_j - first[new_i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (done, rest) = values.split_at_mut(row_start[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = &done[row_start[j]..row_start[j + 1]];
                let dot: f64 = row_i[lo - fi..j - fi]
                    .iter()
                    .zip(&row_j[lo - fj..j - fj])
                    .map(|(x, y)| x * y)
                    .sum();
                let diag_j = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - dot) / diag_j;
            }
            let sq: f64 = row_i[..i - fi].iter().map(|x| x * x).sum();
            let d = row_i[i - fi] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(SparseError::NotPositiveDefinite { pivot: i, value: d });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self {
            dim: n,
            perm,
            inv_perm,
            first,
            row_start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        if b.len() != self.dim {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim,
                found: b.len(),
            });
        }
        let n = self.dim;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.row_start[i]..self.row_start[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, x)| l * x).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.row_start[i]..self.row_start[i + 1]];
            let xi = y[i] / row[i - fi];
            y[i] = xi;
            for (yk, l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= l * xi;
            }
        }
        Ok((0..n).map(|old| y[self.inv_perm[old]]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, density: f64, seed: u64) -> (CsrMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < density {
                    let v = rng.random_range(-1.0..1.0);
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                    triplets.push((i, j, v));
                    triplets.push((j, i, v));
                }
            }
        }
        for i in 0..n {
            let row_abs: f64 = (0..n).filter(|&j| j != i).map(|j| dense[(i, j)].abs()).sum();
            let d = row_abs + 0.5 + rng.random::<f64>();
            dense[(i, i)] = d;
            triplets.push((i, i, d));
        }
        (CsrMatrix::from_triplets(n, triplets), dense)
    }

    #[test]
    fn cholesky_matches_dense_solve() {
        let (a, dense) = random_spd(60, 0.08, 1);
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b).unwrap();
        let expected = dense.clone().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for (u, v) in x.iter().zip(expected.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            EnvelopeCholesky::factor(&a),
            Err(SparseError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rcm_is_a_permutation_and_handles_components() {
        let a = CsrMatrix::from_triplets(
            5,
            vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0), (4, 4, 1.0), (0, 3, 0.1), (3, 0, 0.1)],
        );
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn triplet_text_round_trip_and_duplicates() {
        let m = SparseSymMatrix::from_triplets(
            3,
            vec![(1, 0, 2.0), (0, 1, 0.5), (2, 2, -1.25)],
            SignConvention::Stiffness,
        )
        .unwrap();
        assert_eq!(m.entries(), &[(0, 1, 2.5), (2, 2, -1.25)]);
        let text = m.to_triplet_text();
        assert!(text.starts_with("3 2\n"));
        let back = SparseSymMatrix::from_triplet_text(&text, SignConvention::Stiffness).unwrap();
        assert_eq!(back, m);
        assert!(SparseSymMatrix::from_triplets(2, vec![(0, 2, 1.0)], SignConvention::Laplacian).is_err());
    }

    proptest! {
        #[test]
        fn solve_residual_is_small(seed in 0u64..1000, n in 1usize..40) {
            let (a, _) = random_spd(n, 0.2, seed);
            let f = EnvelopeCholesky::factor(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let x = f.solve(&b).unwrap();
            let r = a.mul_vec(&x);
            for (ri, bi) in r.iter().zip(&b) {
                prop_assert!((ri - bi).abs() < 1e-10 * (1.0 + bi.abs()));
            }
        }
    }
}
