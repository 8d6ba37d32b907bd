//! Triangle mesh data model.

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {n_vertices} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("face {face} references vertex {vertex} more than once")]
    RepeatedVertex { face: usize, vertex: usize },
    #[error("connectivity mismatch: expected hash {expected:#018x}, found {found:#018x}")]
    ConnectivityMismatch { expected: u64, found: u64 },
    #[error("vertex count mismatch: expected {expected}, found {found}")]
    VertexCountMismatch { expected: usize, found: usize },
}

/// Vertex positions plus a triangle table.
///
/// The connectivity hash is computed once from the face table and identifies
/// meshes that share connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    connectivity_hash: u64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: v,
                        n_vertices: n,
                    });
                }
            }
            if f[0] == f[1] || f[0] == f[2] {
                return Err(MeshError::RepeatedVertex { face: fi, vertex: f[0] });
            }
            if f[1] == f[2] {
                return Err(MeshError::RepeatedVertex { face: fi, vertex: f[1] });
            }
        }
        let connectivity_hash = connectivity_hash(&faces);
        Ok(Self {
            vertices,
            faces,
            connectivity_hash,
        })
    }

    /// Same faces, new positions. The face table is shared by value, so the
    /// hash carries over unchanged.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            connectivity_hash: self.connectivity_hash,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn connectivity_hash(&self) -> u64 {
        self.connectivity_hash
    }

    pub fn check_same_connectivity(&self, other: &TriangleMesh) -> Result<(), MeshError> {
        if self.connectivity_hash != other.connectivity_hash || self.faces != other.faces {
            return Err(MeshError::ConnectivityMismatch {
                expected: self.connectivity_hash,
                found: other.connectivity_hash,
            });
        }
        if self.n_vertices() != other.n_vertices() {
            return Err(MeshError::VertexCountMismatch {
                expected: self.n_vertices(),
                found: other.n_vertices(),
            });
        }
        Ok(())
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let p = &self.vertices;
        0.5 * (p[b] - p[a]).cross(&(p[c] - p[a])).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unweighted vertex centroid.
    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }

    /// Sorted undirected edge list.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .into_iter()
                    .map(|(a, b)| [a.min(b), a.max(b)])
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Label of the connected component of every vertex, numbered in order of
    /// first appearance. Vertices referenced by no face form their own component.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2])] {
                let ra = find(&mut parent, a);
                let rb = find(&mut parent, b);
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut root_label = vec![usize::MAX; n];
        let mut next = 0;
        for v in 0..n {
            let r = find(&mut parent, v);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            label[v] = root_label[r];
        }
        label
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// 64-bit FNV-1a digest of the face table (indices as little-endian u64).
pub fn connectivity_hash(faces: &[[usize; 3]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in (faces.len() as u64).to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(PRIME);
    }
    for f in faces {
        for &v in f {
            for byte in (v as u64).to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(PRIME);
            }
        }
    }
    h
}
