//! Cotangent Laplacian and mixed-Voronoi mass matrix.
//!
//! The Laplacian has off-diagonal entries `L_ij = cot a_ij + cot b_ij` (the two
//! angles opposite edge `ij`, one on boundary edges) and a diagonal that makes
//! every row sum to zero. As written `L` is negative semidefinite; the spectral
//! code works with the stiffness `S = -L` so that the smoothest modes have the
//! smallest nonnegative eigenvalues.

use thiserror::Error;

use crate::mesh::{TriangleMesh, Vec3};
use crate::sparse::{SignConvention, SparseSymMatrix};

/// Bound applied to every cotangent, so slivers stay finite.
pub const COT_CLAMP: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaplaceError {
    #[error("face {0} has coincident vertex indices")]
    DegenerateTriangle(usize),
    #[error("mesh has no faces")]
    NoFaces,
    #[error("vertex {0} has zero area (not referenced by any non-degenerate face)")]
    ZeroVertexArea(usize),
}

/// Lumped (diagonal) mass matrix of per-vertex areas.
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrix {
    diagonal: Vec<f64>,
}

impl MassMatrix {
    pub fn from_diagonal(diagonal: Vec<f64>) -> Self {
        Self { diagonal }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn total(&self) -> f64 {
        self.diagonal.iter().sum()
    }
}

/// Cotangent of the angle at `a` in triangle `(a, b, c)`, clamped.
pub fn cot_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let u = b - a;
    let v = c - a;
    let dot = u.dot(&v);
    let cross = u.cross(&v).norm();
    if cross == 0.0 {
        return if dot > 0.0 {
            COT_CLAMP
        } else if dot < 0.0 {
            -COT_CLAMP
        } else {
            0.0
        };
    }
    (dot / cross).clamp(-COT_CLAMP, COT_CLAMP)
}

fn check_faces(mesh: &TriangleMesh) -> Result<(), LaplaceError> {
    if mesh.n_faces() == 0 {
        return Err(LaplaceError::NoFaces);
    }
    for (fi, f) in mesh.faces().iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(LaplaceError::DegenerateTriangle(fi));
        }
    }
    Ok(())
}

/// Undirected edge weights `cot a + cot b`, sorted by edge.
pub fn cotangent_weights(mesh: &TriangleMesh) -> Result<Vec<([usize; 2], f64)>, LaplaceError> {
    check_faces(mesh)?;
    let p = mesh.vertices();
    let mut half: Vec<([usize; 2], f64)> = Vec::with_capacity(3 * mesh.n_faces());
    for f in mesh.faces() {
        for k in 0..3 {
            let (o, i, j) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            half.push(([i.min(j), i.max(j)], cot_angle(&p[o], &p[i], &p[j])));
        }
    }
    half.sort_by_key(|a| a.0);
    let mut merged: Vec<([usize; 2], f64)> = Vec::with_capacity(half.len() / 2 + 1);
    for (e, w) in half {
        match merged.last_mut() {
            Some(last) if last.0 == e => last.1 += w,
            _ => merged.push((e, w)),
        }
    }
    Ok(merged)
}

/// The stiffness form `S = -L` of the cotangent Laplacian, flagged
/// [`SignConvention::Stiffness`].
pub fn cotangent_laplacian(mesh: &TriangleMesh) -> Result<SparseSymMatrix, LaplaceError> {
    let weights = cotangent_weights(mesh)?;
    let n = mesh.n_vertices();
    let mut diag = vec![0.0; n];
    let mut triplets = Vec::with_capacity(weights.len() + n);
    for &([i, j], w) in &weights {
        triplets.push((i, j, -w));
        diag[i] += w;
        diag[j] += w;
    }
    triplets.extend(diag.into_iter().enumerate().map(|(i, d)| (i, i, d)));
    Ok(SparseSymMatrix::from_triplets(n, triplets, SignConvention::Stiffness)
        .expect("indices come from a validated mesh"))
}

/// Mixed Voronoi areas: circumcentric Voronoi cells inside non-obtuse
/// triangles; for an obtuse triangle the obtuse corner takes half the area and
/// the other two corners a quarter each.
pub fn mass_matrix(mesh: &TriangleMesh) -> Result<MassMatrix, LaplaceError> {
    check_faces(mesh)?;
    let p = mesh.vertices();
    let mut area = vec![0.0; mesh.n_vertices()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let a = mesh.face_area(fi);
        if a == 0.0 {
            continue;
        }
        let corner = |k: usize| {
            let (o, i, j) = (p[f[k]], p[f[(k + 1) % 3]], p[f[(k + 2) % 3]]);
            (i - o).dot(&(j - o))
        };
        let dots = [corner(0), corner(1), corner(2)];
        if let Some(obtuse) = dots.iter().position(|&d| d < 0.0) {
            for k in 0..3 {
                area[f[k]] += if k == obtuse { a / 2.0 } else { a / 4.0 };
            }
        } else {
            for k in 0..3 {
                let (o, i, j) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                // |o i|^2 cot(angle at j) + |o j|^2 cot(angle at i)
                let cot_j = cot_angle(&p[j], &p[o], &p[i]);
                let cot_i = cot_angle(&p[i], &p[j], &p[o]);
                area[o] += ((p[i] - p[o]).norm_squared() * cot_j
                    + (p[j] - p[o]).norm_squared() * cot_i)
                    / 8.0;
            }
        }
    }
    if let Some(v) = area.iter().position(|&a| !(a > 0.0)) {
        return Err(LaplaceError::ZeroVertexArea(v));
    }
    Ok(MassMatrix { diagonal: area })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_equilateral() -> TriangleMesh {
        let h = 3f64.sqrt() / 2.0;
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, h, 0.0),
                Vec3::new(0.5, -h, 0.0),
            ],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap()
    }

    /// Per-face assembly using acos for the angles, independent of
    /// `cot_angle`.
    fn brute_force_weight(mesh: &TriangleMesh, i: usize, j: usize) -> f64 {
        let p = mesh.vertices();
        mesh.faces()
            .iter()
            .filter(|f| f.contains(&i) && f.contains(&j))
            .map(|f| {
                let o = *f.iter().find(|&&v| v != i && v != j).unwrap();
                let (u, v) = (p[i] - p[o], p[j] - p[o]);
                let ang = (u.dot(&v) / (u.norm() * v.norm())).acos();
                1.0 / ang.tan()
            })
            .sum()
    }

    #[test]
    fn equilateral_pair_weight() {
        let m = two_equilateral();
        let s = cotangent_laplacian(&m).unwrap();
        let w = -s.get(0, 1);
        assert!((w - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((w - brute_force_weight(&m, 0, 1)).abs() < 1e-12);
        // boundary edges carry a single cotangent
        assert!((-s.get(0, 2) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn right_angle_gives_zero_weight() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = cotangent_laplacian(&m).unwrap();
        assert!(s.get(1, 2).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_zero_on_closed_mesh() {
        let m = synthetic::bumpy_sphere(4, 3, 0.3);
        let s = cotangent_laplacian(&m).unwrap().to_csr();
        for i in 0..m.n_vertices() {
            assert!(s.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn equilateral_mass() {
        let h = 3f64.sqrt() / 2.0;
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.5, h, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mass = mass_matrix(&m).unwrap();
        // circumcenter split: the circumcenter sits at the centroid, each
        // corner kite is two right triangles with legs 1/2 and 1/(2 sqrt 3)
        let kite = 2.0 * 0.5 * 0.5 * (0.5 / 3f64.sqrt());
        for &a in mass.diagonal() {
            assert!((a - 3f64.sqrt() / 12.0).abs() < 1e-15);
            assert!((a - kite).abs() < 1e-15);
        }
    }

    #[test]
    fn obtuse_fallback() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0), Vec3::new(2.0, 0.5, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mass = mass_matrix(&m).unwrap();
        assert_eq!(mass.diagonal(), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn mass_sums_to_area_and_scales_quadratically() {
        let m = synthetic::bumpy_sphere(9, 3, 0.5);
        let mass = mass_matrix(&m).unwrap();
        assert!((mass.total() - m.total_area()).abs() < 1e-9);
        assert!(mass.diagonal().iter().all(|&a| a > 0.0));
        let s = 2.5;
        let scaled = m.with_vertices(m.vertices().iter().map(|p| p * s).collect()).unwrap();
        let ms = mass_matrix(&scaled).unwrap();
        for (a, b) in mass.diagonal().iter().zip(ms.diagonal()) {
            assert!((b - s * s * a).abs() < 1e-12 * b.abs().max(1.0));
        }
        let l = cotangent_laplacian(&m).unwrap();
        let ls = cotangent_laplacian(&scaled).unwrap();
        for (a, b) in l.entries().iter().zip(ls.entries()) {
            assert!((a.2 - b.2).abs() < 1e-9);
        }
    }

    #[test]
    fn stiffness_is_psd_and_annihilates_constants() {
        let m = synthetic::bumpy_sphere(2, 3, 0.4);
        let s = cotangent_laplacian(&m).unwrap().to_csr();
        let n = m.n_vertices();
        let ones = vec![1.0; n];
        let s1 = s.mul_vec(&ones);
        assert!(s1.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sv = s.mul_vec(&v);
            let q: f64 = v.iter().zip(&sv).map(|(a, b)| a * b).sum();
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            assert!(q >= -1e-9 * norm2);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let m = synthetic::bumpy_sphere(6, 2, 0.4);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::new(1.0, -2.0, 0.5)), 1.1);
        let t = Vec3::new(3.0, -1.0, 7.0);
        let moved = m.with_vertices(m.vertices().iter().map(|p| r * p + t).collect()).unwrap();
        let a = cotangent_laplacian(&m).unwrap();
        let b = cotangent_laplacian(&moved).unwrap();
        assert_eq!(a.nnz(), b.nnz());
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!((x.0, x.1), (y.0, y.1));
            assert!((x.2 - y.2).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_and_clamped() {
        // collinear triangle: finite clamped cotangents
        let m = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = cotangent_laplacian(&m).unwrap();
        assert!(s.entries().iter().all(|e| e.2.is_finite() && e.2.abs() <= 2.0 * COT_CLAMP));
        assert!(matches!(mass_matrix(&m), Err(LaplaceError::ZeroVertexArea(_))));
        let empty = TriangleMesh::new(vec![Vec3::zeros()], vec![]).unwrap();
        assert_eq!(cotangent_laplacian(&empty).unwrap_err(), LaplaceError::NoFaces);
    }
}
