//! Procedural test shapes: icospheres, UV spheres and datasets of "bumpy
//! spheres" whose subjects differ by smooth shape modes plus fine detail.

use std::collections::HashMap;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::mesh::{TriangleMesh, Vec3};

/// Unit icosphere. Vertex counts: 12, 42, 162, 642, 2562, 10242, ...
pub fn icosphere(subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh::new(verts, faces).expect("icosphere faces are valid")
}

/// Unit UV sphere with `rings` latitude bands and `segments` longitudes;
/// `2 + (rings - 1) * segments` vertices.
pub fn uv_sphere(rings: usize, segments: usize) -> TriangleMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut verts = vec![Vec3::new(0.0, 0.0, 1.0)];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    verts.push(Vec3::new(0.0, 0.0, -1.0));
    let south = verts.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r + 1, s), ring(r + 1, s + 1), ring(r, s + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriangleMesh::new(verts, faces).expect("uv sphere faces are valid")
}

/// Smooth scalar fields on the unit sphere used as low-frequency modes.
fn low_mode(i: usize, p: &Vec3) -> f64 {
    match i % 8 {
        0 => p.x,
        1 => p.y * p.z,
        2 => p.x * p.x - p.y * p.y,
        3 => 3.0 * p.z * p.z - 1.0,
        4 => p.x * p.y,
        5 => p.z * (p.x * p.x - 0.5),
        6 => p.y,
        _ => p.x * p.z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HighMode {
    dir: Vec3,
    freq: f64,
    phase: f64,
}

fn high_modes(count: usize, rng: &mut ChaCha8Rng) -> Vec<HighMode> {
    (0..count)
        .map(|_| {
            let d = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            HighMode {
                dir: d.normalize(),
                freq: rng.random_range(9.0..14.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect()
}

/// Sphere with a fixed radial bump pattern, for tests needing a generic
/// (symmetry-free) closed surface.
pub fn bumpy_sphere(seed: u64, subdivisions: usize, amplitude: f64) -> TriangleMesh {
    let base = icosphere(subdivisions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let verts = base
        .vertices()
        .iter()
        .map(|p| {
            let r = 1.0
                + amplitude
                    * coeffs
                        .iter()
                        .enumerate()
                        .map(|(i, c)| c * low_mode(i, p))
                        .sum::<f64>()
                    / 4.0;
            p * r
        })
        .collect();
    base.with_vertices(verts).unwrap()
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n_shapes: usize,
    pub subdivisions: usize,
    pub seed: u64,
    /// Number of smooth radial modes per subject.
    pub low_modes: usize,
    /// Standard deviation of each smooth mode coefficient.
    pub low_amplitude: f64,
    /// Number of fine-detail radial modes per subject.
    pub high_modes: usize,
    pub high_amplitude: f64,
    /// Apply a random rotation and translation to every subject.
    pub random_pose: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_shapes: 20,
            subdivisions: 3,
            seed: 42,
            low_modes: 6,
            low_amplitude: 0.12,
            high_modes: 6,
            high_amplitude: 0.008,
            random_pose: true,
        }
    }
}

/// Shapes sharing the icosphere connectivity. Each subject is a sphere with
/// per-subject ellipsoidal stretch, smooth radial modes and high-frequency
/// radial ripples, optionally placed in a random pose.
pub fn bumpy_dataset(spec: &DatasetSpec) -> Vec<TriangleMesh> {
    let base = icosphere(spec.subdivisions);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ripples = high_modes(spec.high_modes, &mut rng);
    (0..spec.n_shapes)
        .map(|_| {
            let stretch = Vec3::new(
                1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal),
                1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal),
                1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal),
            );
            let low: Vec<f64> = (0..spec.low_modes)
                .map(|_| spec.low_amplitude * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let high: Vec<f64> = (0..spec.high_modes)
                .map(|_| spec.high_amplitude * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let axis = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let angle = rng.random_range(-0.5..0.5);
            let shift = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let pose = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
            let verts = base
                .vertices()
                .iter()
                .map(|p| {
                    let mut r = 1.0;
                    for (i, c) in low.iter().enumerate() {
                        r += c * low_mode(i, p);
                    }
                    for (m, c) in ripples.iter().zip(&high) {
                        r += c * (m.freq * m.dir.dot(p) + m.phase).sin();
                    }
                    let q = p.component_mul(&stretch) * r;
                    if spec.random_pose {
                        pose * q + shift
                    } else {
                        q
                    }
                })
                .collect();
            base.with_vertices(verts).unwrap()
        })
        .collect()
}
