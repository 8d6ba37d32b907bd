//! OBJ (read/write) and PLY (read-only, ascii and binary little-endian)
//! loaders, plus the JSON dataset manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::{MeshError, TriangleMesh, Vec3};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("polygon at line {line} has {count} vertices; at least 3 are required")]
    NonTriangulable { line: usize, count: usize },
    #[error("face index {index} at line {line} is out of range for {n_vertices} vertices")]
    IndexOutOfRange {
        line: usize,
        index: i64,
        n_vertices: usize,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("unsupported mesh format for {0}")]
    UnknownFormat(PathBuf),
    #[error("invalid dataset manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Some(MeshFormat::Obj),
            Some("ply") => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    match format {
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes).map_err(|e| IoError::Parse {
                line: 0,
                message: format!("not valid UTF-8: {e}"),
            })?;
            parse_obj(&text)
        }
        MeshFormat::Ply => parse_ply(&bytes),
    }
}

/// Loads a mesh, picking the format from the file extension.
pub fn load_mesh_auto(path: &Path) -> Result<TriangleMesh, IoError> {
    let format = MeshFormat::from_path(path).ok_or_else(|| IoError::UnknownFormat(path.to_path_buf()))?;
    load_mesh(path, format)
}

/// Fan-triangulates a polygon: (0,1,2), (0,2,3), ...
fn fan(poly: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..poly.len() - 1).map(move |i| [poly[0], poly[i], poly[i + 1]])
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh, IoError> {
    let mut vertices = Vec::new();
    let mut polys: Vec<(usize, Vec<i64>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut xyz = [0.0f64; 3];
                for c in xyz.iter_mut() {
                    let t = tok.next().ok_or_else(|| IoError::Parse {
                        line,
                        message: "vertex record needs three coordinates".into(),
                    })?;
                    *c = t.parse().map_err(|_| IoError::Parse {
                        line,
                        message: format!("bad coordinate {t:?}"),
                    })?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    // "i", "i/t", "i//n", "i/t/n"
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| IoError::Parse {
                        line,
                        message: format!("bad face index {t:?}"),
                    })?;
                    idx.push(i);
                }
                polys.push((line, idx));
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mut faces = Vec::new();
    for (line, idx) in polys {
        if idx.len() < 3 {
            return Err(IoError::NonTriangulable {
                line,
                count: idx.len(),
            });
        }
        let mut resolved = Vec::with_capacity(idx.len());
        for i in idx {
            // negative indices are relative to the end of the vertex list
            let zero_based = if i > 0 { i - 1 } else { n as i64 + i };
            if i == 0 || zero_based < 0 || zero_based >= n as i64 {
                return Err(IoError::IndexOutOfRange {
                    line,
                    index: i,
                    n_vertices: n,
                });
            }
            resolved.push(zero_based as usize);
        }
        faces.extend(fan(&resolved));
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

/// OBJ text with shortest round-trip float formatting, so reading the file
/// back yields bit-identical coordinates.
pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.n_vertices() * 48 + mesh.n_faces() * 24);
    for v in mesh.vertices() {
        out.push_str(&format!("v {:?} {:?} {:?}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    out
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(obj_string(mesh).as_bytes())
        .map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh, IoError> {
    let perr = |line: usize, message: String| IoError::Parse { line, message };
    // header is ASCII, terminated by "end_header\n"
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| perr(0, "missing end_header".into()))?;
    let mut body_start = end + marker.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| perr(0, "header is not ASCII".into()))?;

    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (ln, line) in header.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("ply") | Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                binary = Some(match tok.next() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => {
                        return Err(perr(ln + 1, format!("unsupported PLY format {other:?}")));
                    }
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| perr(ln + 1, "element name".into()))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| perr(ln + 1, "element count".into()))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(ln + 1, "property before element".into()))?;
                let t = tok.next().ok_or_else(|| perr(ln + 1, "property type".into()))?;
                if t == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    let name = tok.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) => el.props.push(Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        }),
                        _ => return Err(perr(ln + 1, "malformed list property".into())),
                    }
                } else {
                    let ty = Scalar::parse(t).ok_or_else(|| perr(ln + 1, format!("unknown type {t}")))?;
                    let name = tok.next().ok_or_else(|| perr(ln + 1, "property name".into()))?;
                    el.props.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some(other) => return Err(perr(ln + 1, format!("unknown header keyword {other}"))),
        }
    }
    let binary = binary.ok_or_else(|| perr(0, "missing format line".into()))?;
    let body = &bytes[body_start.min(bytes.len())..];

    let mut vertices = Vec::new();
    let mut polys: Vec<Vec<i64>> = Vec::new();

    // both encodings are consumed through the same "next value" interface
    let mut ascii_tokens = if binary {
        None
    } else {
        Some(
            std::str::from_utf8(body)
                .map_err(|_| perr(0, "ascii body is not UTF-8".into()))?
                .split_whitespace(),
        )
    };
    let mut offset = 0usize;
    let mut next = |ty: Scalar| -> Result<f64, IoError> {
        if let Some(tokens) = ascii_tokens.as_mut() {
            let t = tokens
                .next()
                .ok_or_else(|| perr(0, "unexpected end of PLY body".into()))?;
            t.parse::<f64>()
                .map_err(|_| perr(0, format!("bad PLY value {t:?}")))
        } else {
            let n = ty.size();
            if offset + n > body.len() {
                return Err(perr(0, "unexpected end of PLY body".into()));
            }
            let v = ty.read_le(&body[offset..offset + n]);
            offset += n;
            Ok(v)
        }
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut poly = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar { name, ty } => {
                        let v = next(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let c = next(*count)? as usize;
                        let is_faces = name == "vertex_indices" || name == "vertex_index";
                        for _ in 0..c {
                            let v = next(*item)?;
                            if is_faces {
                                poly.push(v as i64);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2])),
                "face" => polys.push(poly),
                _ => {}
            }
        }
    }

    let n = vertices.len();
    let mut faces = Vec::new();
    for (fi, poly) in polys.iter().enumerate() {
        if poly.len() < 3 {
            return Err(IoError::NonTriangulable {
                line: fi,
                count: poly.len(),
            });
        }
        let mut resolved = Vec::with_capacity(poly.len());
        for &i in poly {
            if i < 0 || i >= n as i64 {
                return Err(IoError::IndexOutOfRange {
                    line: fi,
                    index: i,
                    n_vertices: n,
                });
            }
            resolved.push(i as usize);
        }
        faces.extend(fan(&resolved));
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

/// Reads a dataset manifest: either a JSON array of paths or an object with a
/// `"meshes"` array. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| IoError::Manifest(e.to_string()))?;
    let list = match &value {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(o) => o
            .get("meshes")
            .and_then(|m| m.as_array())
            .ok_or_else(|| IoError::Manifest("expected a \"meshes\" array".into()))?,
        _ => return Err(IoError::Manifest("expected an array or object".into())),
    };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    list.iter()
        .map(|v| {
            let s = v
                .as_str()
                .ok_or_else(|| IoError::Manifest(format!("entry {v} is not a string")))?;
            let p = PathBuf::from(s);
            Ok(if p.is_absolute() { p } else { base.join(p) })
        })
        .collect()
}

pub fn write_manifest(path: &Path, meshes: &[PathBuf]) -> Result<(), IoError> {
    let list: Vec<String> = meshes.iter().map(|p| p.display().to_string()).collect();
    let text = serde_json::to_string_pretty(&serde_json::json!({ "meshes": list }))
        .map_err(|e| IoError::Manifest(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}
