//! Shape datasets with shared connectivity and their rigid preprocessing:
//! centering, Procrustes alignment to the mean shape, one global scale.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::mesh::{centroid, MeshError, TriangleMesh, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("dataset needs at least 2 shapes, got {0}")]
    TooFewShapes(usize),
    #[error("shape {shape}: {source}")]
    ConnectivityMismatch {
        shape: usize,
        #[source]
        source: MeshError,
    },
    #[error("degenerate dataset: every shape collapses to a single point")]
    DegenerateDataset,
    #[error("shape index {index} out of range for {n_shapes} shapes")]
    IndexOutOfRange { index: usize, n_shapes: usize },
}

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.scale * (self.rotation * first.translation) + self.translation,
            scale: self.scale * first.scale,
        }
    }
}

/// Rotation `R` (det +1) minimizing `sum |R * source_i - target_i|^2`.
///
/// Both point sets are assumed centered. A reflection in the optimal
/// orthogonal map is removed by flipping the smallest singular direction.
pub fn procrustes_rotation(source: &[Vec3], target: &[Vec3]) -> Matrix3<f64> {
    let h: Matrix3<f64> = source
        .iter()
        .zip(target)
        .fold(Matrix3::zeros(), |acc, (s, t)| acc + t * s.transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let min_idx = svd.singular_values.imin();
    let mut flip = Matrix3::identity();
    flip[(min_idx, min_idx)] = if d < 0.0 { -1.0 } else { 1.0 };
    u * flip * v_t
}

/// Rotation angle via atan2 of the skew and trace parts; acos of the trace
/// alone cannot resolve angles below about 1e-8.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (0.5 * skew.norm()).atan2(0.5 * (r.trace() - 1.0))
}

/// Shapes sharing one face table, after preprocessing.
#[derive(Debug, Clone)]
pub struct MeshDataset {
    faces: Vec<[usize; 3]>,
    connectivity_hash: u64,
    shapes: Vec<Vec<Vec3>>,
    mean: Vec<Vec3>,
    alignment_log: Vec<RigidTransform>,
}

const ALIGN_MAX_ITERS: usize = 200;
const ALIGN_ANGLE_TOL: f64 = 1e-14;

impl MeshDataset {
    /// Centers every shape, aligns all shapes to their mean by iterated
    /// Procrustes (until the mean stops rotating), re-expresses the result in
    /// the frame of shape 0, and scales everything by one global factor so
    /// every coordinate lies in [-1, 1].
    pub fn preprocess(raw: &[TriangleMesh]) -> Result<Self, DatasetError> {
        if raw.len() < 2 {
            return Err(DatasetError::TooFewShapes(raw.len()));
        }
        let reference = &raw[0];
        for (i, m) in raw.iter().enumerate().skip(1) {
            reference
                .check_same_connectivity(m)
                .map_err(|source| DatasetError::ConnectivityMismatch { shape: i, source })?;
        }

        let centroids: Vec<Vec3> = raw.iter().map(|m| m.centroid()).collect();
        let centered: Vec<Vec<Vec3>> = raw
            .iter()
            .zip(&centroids)
            .map(|(m, c)| m.vertices().iter().map(|p| p - c).collect())
            .collect();

        let mut rotations = vec![Matrix3::identity(); raw.len()];
        let mut mean = per_vertex_mean(&centered);
        for _ in 0..ALIGN_MAX_ITERS {
            let mut max_change = 0.0f64;
            for (r, shape) in rotations.iter_mut().zip(&centered) {
                let new_r = procrustes_rotation(shape, &mean);
                max_change = max_change.max(rotation_angle(&(new_r * r.transpose())));
                *r = new_r;
            }
            let aligned: Vec<Vec<Vec3>> = rotations
                .iter()
                .zip(&centered)
                .map(|(r, s)| s.iter().map(|p| r * p).collect())
                .collect();
            mean = per_vertex_mean(&aligned);
            if max_change < ALIGN_ANGLE_TOL {
                break;
            }
        }

        // frame of shape 0: its logged rotation becomes the identity
        let gauge = rotations[0].transpose();
        for r in rotations.iter_mut() {
            *r = gauge * *r;
        }
        rotations[0] = Matrix3::identity();

        let aligned: Vec<Vec<Vec3>> = rotations
            .iter()
            .zip(&centered)
            .map(|(r, s)| s.iter().map(|p| r * p).collect())
            .collect();
        let extent = aligned
            .iter()
            .flatten()
            .map(|p| p.amax())
            .fold(0.0f64, f64::max);
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(DatasetError::DegenerateDataset);
        }
        // already inside the cube: leave the scale alone so preprocessing is
        // idempotent bit-for-bit on the scale factor
        let scale = if (extent - 1.0).abs() <= 1e-15 { 1.0 } else { 1.0 / extent };

        let shapes: Vec<Vec<Vec3>> = aligned
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|p| (p * scale).map(|c| c.clamp(-1.0, 1.0)))
                    .collect()
            })
            .collect();
        let alignment_log = rotations
            .iter()
            .zip(&centroids)
            .map(|(r, c)| RigidTransform {
                rotation: *r,
                translation: -scale * (r * c),
                scale,
            })
            .collect();
        let mean = per_vertex_mean(&shapes);
        Ok(Self {
            faces: reference.faces().to_vec(),
            connectivity_hash: reference.connectivity_hash(),
            shapes,
            mean,
            alignment_log,
        })
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn connectivity_hash(&self) -> u64 {
        self.connectivity_hash
    }

    pub fn n_shapes(&self) -> usize {
        self.shapes.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.mean.len()
    }

    pub fn shape(&self, index: usize) -> Result<&[Vec3], DatasetError> {
        self.shapes
            .get(index)
            .map(Vec::as_slice)
            .ok_or(DatasetError::IndexOutOfRange {
                index,
                n_shapes: self.shapes.len(),
            })
    }

    pub fn shapes(&self) -> &[Vec<Vec3>] {
        &self.shapes
    }

    pub fn mean_vertices(&self) -> &[Vec3] {
        &self.mean
    }

    pub fn alignment_log(&self) -> &[RigidTransform] {
        &self.alignment_log
    }

    pub fn mesh(&self, index: usize) -> Result<TriangleMesh, DatasetError> {
        let verts = self.shape(index)?.to_vec();
        Ok(TriangleMesh::new(verts, self.faces.clone()).expect("dataset faces were validated"))
    }

    pub fn mean_mesh(&self) -> TriangleMesh {
        TriangleMesh::new(self.mean.clone(), self.faces.clone()).expect("dataset faces were validated")
    }

    /// Offset of a shape from the mean, `P - mean`.
    pub fn mean_deformation(&self, index: usize) -> Result<Vec<Vec3>, DatasetError> {
        Ok(self
            .shape(index)?
            .iter()
            .zip(&self.mean)
            .map(|(p, m)| p - m)
            .collect())
    }

    /// Global uniform scale applied during preprocessing.
    pub fn scale(&self) -> f64 {
        self.alignment_log.first().map_or(1.0, |t| t.scale)
    }
}

/// Per-vertex arithmetic mean, summed in shape order.
pub fn per_vertex_mean(shapes: &[Vec<Vec3>]) -> Vec<Vec3> {
    let n = shapes.first().map_or(0, Vec::len);
    let inv = 1.0 / shapes.len() as f64;
    (0..n)
        .map(|v| shapes.iter().fold(Vec3::zeros(), |acc, s| acc + s[v]) * inv)
        .collect()
}

/// Brings a shape into a dataset frame: center it, rotate it onto
/// `mean / scale` by Procrustes, then apply the global scale.
pub fn align_to_mean(points: &[Vec3], mean: &[Vec3], scale: f64) -> (Vec<Vec3>, RigidTransform) {
    let c = centroid(points);
    let centered: Vec<Vec3> = points.iter().map(|p| p - c).collect();
    let target: Vec<Vec3> = mean.iter().map(|p| p / scale).collect();
    let r = procrustes_rotation(&centered, &target);
    let t = RigidTransform {
        rotation: r,
        translation: -scale * (r * c),
        scale,
    };
    (points.iter().map(|p| t.apply(p)).collect(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use nalgebra::Rotation3;

    fn rot_z(angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vec3::z_axis(), angle).matrix()
    }

    fn asym_mesh() -> TriangleMesh {
        synthetic::bumpy_sphere(1, 3, 0.2)
    }

    #[test]
    fn rotation_angle_resolves_tiny_angles() {
        for a in [1e-12, 1e-9, 0.3, 3.0] {
            assert!((rotation_angle(&rot_z(a)) - a).abs() <= 1e-15 * a.max(1.0), "{a}");
        }
    }

    #[test]
    fn inverse_undoes_transform() {
        let t = RigidTransform {
            rotation: rot_z(0.7),
            translation: Vec3::new(1.0, -2.0, 0.5),
            scale: 2.5,
        };
        let p = Vec3::new(0.3, 0.1, -0.9);
        assert!((t.inverse().apply(&t.apply(&p)) - p).amax() < 1e-15);
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-15 && id.translation.amax() < 1e-15);
    }

    #[test]
    fn duplicated_shape_keeps_identity_rotations() {
        let m = asym_mesh();
        let ds = MeshDataset::preprocess(&[m.clone(), m.clone()]).unwrap();
        for t in ds.alignment_log() {
            assert!((t.rotation - Matrix3::identity()).amax() < 1e-12);
        }
        for (a, b) in ds.mean_vertices().iter().zip(ds.shape(0).unwrap()) {
            assert!((a - b).amax() < 1e-15);
        }
    }

    #[test]
    fn rotated_copy_is_undone() {
        let m = asym_mesh();
        let r = rot_z(std::f64::consts::FRAC_PI_2);
        let rotated = m
            .with_vertices(m.vertices().iter().map(|p| r * p + Vec3::new(0.3, -2.0, 1.0)).collect())
            .unwrap();
        let (m0, rotated0) = (m.clone(), rotated.clone());
        let ds = MeshDataset::preprocess(&[m, rotated]).unwrap();
        let logged = ds.alignment_log()[1].rotation;
        assert!((logged - r.transpose()).amax() < 1e-9, "{logged}");
        for (a, b) in ds.shape(0).unwrap().iter().zip(ds.shape(1).unwrap()) {
            assert!((a - b).amax() < 1e-9);
        }
        // independent oracle: grid search over z rotations taking the
        // centered rotated copy onto the centered original
        let c0 = raw_centered(&m0);
        let c1 = raw_centered(&rotated0);
        let cost = |ang: f64| {
            let q = rot_z(ang);
            c1.iter().zip(&c0).map(|(y, x)| (q * y - x).norm_squared()).sum::<f64>()
        };
        let best = (0..36000)
            .map(|i| i as f64 * std::f64::consts::TAU / 36000.0)
            .min_by(|a, b| cost(*a).partial_cmp(&cost(*b)).unwrap())
            .unwrap();
        assert!((rot_z(best) - logged).amax() < 2e-4);
    }

    fn raw_centered(m: &TriangleMesh) -> Vec<Vec3> {
        let c = m.centroid();
        m.vertices().iter().map(|p| p - c).collect()
    }

    #[test]
    fn scale_bounds_and_zero_mean_deformation() {
        let raw = synthetic::bumpy_dataset(&synthetic::DatasetSpec {
            n_shapes: 6,
            subdivisions: 2,
            seed: 3,
            ..Default::default()
        });
        let ds = MeshDataset::preprocess(&raw).unwrap();
        let max = ds.shapes().iter().flatten().map(|p| p.amax()).fold(0.0, f64::max);
        assert!(max <= 1.0 + 1e-12);
        assert!((max - 1.0).abs() < 1e-12);
        let mut total = vec![Vec3::zeros(); ds.n_vertices()];
        for i in 0..ds.n_shapes() {
            for (t, d) in total.iter_mut().zip(ds.mean_deformation(i).unwrap()) {
                *t += d;
            }
        }
        assert!(total.iter().all(|t| t.amax() < 1e-9));
        for t in ds.alignment_log() {
            assert!((t.rotation.determinant() - 1.0).abs() < 1e-10);
            assert!((t.rotation.transpose() * t.rotation - Matrix3::identity()).amax() < 1e-10);
            assert!(t.scale > 0.0);
        }
        // log reproduces the stored shapes from the raw input
        for (i, m) in raw.iter().enumerate() {
            let t = ds.alignment_log()[i];
            for (p, q) in m.vertices().iter().zip(ds.shape(i).unwrap()) {
                assert!((t.apply(p) - q).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn preprocessing_is_idempotent() {
        let raw = synthetic::bumpy_dataset(&synthetic::DatasetSpec {
            n_shapes: 5,
            subdivisions: 2,
            seed: 11,
            ..Default::default()
        });
        let ds = MeshDataset::preprocess(&raw).unwrap();
        let again: Vec<TriangleMesh> = (0..ds.n_shapes()).map(|i| ds.mesh(i).unwrap()).collect();
        let ds2 = MeshDataset::preprocess(&again).unwrap();
        for (a, b) in ds.shapes().iter().flatten().zip(ds2.shapes().iter().flatten()) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn mean_deformation_identities() {
        let raw = synthetic::bumpy_dataset(&synthetic::DatasetSpec {
            n_shapes: 3,
            subdivisions: 1,
            seed: 5,
            ..Default::default()
        });
        let ds = MeshDataset::preprocess(&raw).unwrap();
        let d = ds.mean_deformation(1).unwrap();
        for ((dv, m), p) in d.iter().zip(ds.mean_vertices()).zip(ds.shape(1).unwrap()) {
            assert!((dv + m - p).amax() <= 1e-15);
        }
        assert!(matches!(
            ds.mean_deformation(7),
            Err(DatasetError::IndexOutOfRange { index: 7, n_shapes: 3 })
        ));
    }

    #[test]
    fn error_cases() {
        let m = asym_mesh();
        assert_eq!(
            MeshDataset::preprocess(&[m.clone()]).unwrap_err(),
            DatasetError::TooFewShapes(1)
        );
        let other = TriangleMesh::new(m.vertices().to_vec(), m.faces()[1..].to_vec()).unwrap();
        assert!(matches!(
            MeshDataset::preprocess(&[m.clone(), other]),
            Err(DatasetError::ConnectivityMismatch { shape: 1, .. })
        ));
        let point = m.with_vertices(vec![Vec3::new(1.0, 2.0, 3.0); m.n_vertices()]).unwrap();
        assert_eq!(
            MeshDataset::preprocess(&[point.clone(), point]).unwrap_err(),
            DatasetError::DegenerateDataset
        );
    }

    #[test]
    fn align_to_mean_reproduces_training_frame() {
        let raw = synthetic::bumpy_dataset(&synthetic::DatasetSpec {
            n_shapes: 4,
            subdivisions: 2,
            seed: 8,
            ..Default::default()
        });
        let ds = MeshDataset::preprocess(&raw).unwrap();
        let (aligned, _) = align_to_mean(raw[2].vertices(), ds.mean_vertices(), ds.scale());
        for (a, b) in aligned.iter().zip(ds.shape(2).unwrap()) {
            assert!((a - b).amax() < 1e-9);
        }
    }
}
