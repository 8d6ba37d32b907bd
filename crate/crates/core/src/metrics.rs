//! Point-wise L1 error and the dihedral angle mesh error (DAME) with area
//! weights and curvature masking.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::mesh::{MeshError, TriangleMesh, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    ConnectivityMismatch(#[from] MeshError),
    #[error("mesh has no interior edges")]
    NoInteriorEdges,
    #[error("inconsistent winding at edge ({0}, {1})")]
    InconsistentWinding(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DameConfig {
    /// `c` in the masking term `1 / (1 + c |D|)`.
    pub masking: f64,
}

impl Default for DameConfig {
    fn default() -> Self {
        Self { masking: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeValue {
    pub v0: usize,
    pub v1: usize,
    /// Weighted, masked angle difference of this edge.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub l1: f64,
    pub dame: f64,
    #[serde(skip)]
    pub per_edge: Vec<EdgeValue>,
}

/// Mean of `|P - P'|` over all `3N` coordinates.
pub fn l1_error(reference: &TriangleMesh, test: &TriangleMesh) -> Result<f64, MetricsError> {
    reference.check_same_connectivity(test)?;
    let n = reference.n_vertices();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = reference
        .vertices()
        .iter()
        .zip(test.vertices())
        .map(|(a, b)| (a - b).abs().sum())
        .sum();
    Ok(sum / (3 * n) as f64)
}

/// An interior edge `a -> b` as oriented in `left`, with `right` holding
/// `b -> a`.
#[derive(Debug, Clone, Copy)]
struct InteriorEdge {
    a: usize,
    b: usize,
    left: usize,
    right: usize,
}

fn interior_edges(mesh: &TriangleMesh) -> Result<Vec<InteriorEdge>, MetricsError> {
    // key: undirected edge; value: (face, forward?) occurrences
    let mut map: BTreeMap<(usize, usize), Vec<(usize, bool)>> = BTreeMap::new();
    for (f, tri) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            map.entry((a.min(b), a.max(b))).or_default().push((f, a < b));
        }
    }
    let mut out = Vec::new();
    for ((lo, hi), uses) in map {
        if uses.len() != 2 {
            continue;
        }
        let (f0, fwd0) = uses[0];
        let (f1, fwd1) = uses[1];
        if fwd0 == fwd1 {
            return Err(MetricsError::InconsistentWinding(lo, hi));
        }
        let (left, right) = if fwd0 { (f0, f1) } else { (f1, f0) };
        out.push(InteriorEdge {
            a: lo,
            b: hi,
            left,
            right,
        });
    }
    Ok(out)
}

fn face_normal(p: &[Vec3], tri: &[usize; 3]) -> Vec3 {
    (p[tri[1]] - p[tri[0]]).cross(&(p[tri[2]] - p[tri[0]]))
}

/// Signed dihedral (bending) angle at `e`: 0 for coplanar faces, positive
/// for a convex fold, negative for a concave one.
fn dihedral(p: &[Vec3], faces: &[[usize; 3]], e: &InteriorEdge) -> f64 {
    let n1 = face_normal(p, &faces[e.left]);
    let n2 = face_normal(p, &faces[e.right]);
    let axis = (p[e.b] - p[e.a]).normalize();
    // (n1 x n2) is parallel to the edge; its sign along a->b gives the fold
    n1.cross(&n2).dot(&axis).atan2(n1.dot(&n2))
}

pub fn dame(reference: &TriangleMesh, test: &TriangleMesh, config: &DameConfig) -> Result<MetricReport, MetricsError> {
    reference.check_same_connectivity(test)?;
    let edges = interior_edges(reference)?;
    if edges.is_empty() {
        return Err(MetricsError::NoInteriorEdges);
    }
    let faces = reference.faces();
    let mean_area = reference.total_area() / reference.n_faces() as f64;
    let per_edge: Vec<EdgeValue> = edges
        .iter()
        .map(|e| {
            let d_ref = dihedral(reference.vertices(), faces, e);
            let d_test = dihedral(test.vertices(), faces, e);
            let w = if mean_area > 0.0 {
                (reference.face_area(e.left) + reference.face_area(e.right)) / (2.0 * mean_area)
            } else {
                0.0
            };
            let mask = 1.0 / (1.0 + config.masking * d_ref.abs());
            EdgeValue {
                v0: e.a,
                v1: e.b,
                value: w * (d_ref - d_test).abs() * mask,
            }
        })
        .collect();
    let dame = per_edge.iter().map(|e| e.value).sum::<f64>() / per_edge.len() as f64;
    Ok(MetricReport {
        l1: l1_error(reference, test)?,
        dame,
        per_edge,
    })
}

/// `edge_v0,edge_v1,value` lines for heatmap tooling.
pub fn per_edge_csv(report: &MetricReport) -> String {
    let mut out = String::from("edge_v0,edge_v1,value\n");
    for e in &report.per_edge {
        out.push_str(&format!("{},{},{:?}\n", e.v0, e.v1, e.value));
    }
    out
}
