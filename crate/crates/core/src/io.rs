//! PLY and OBJ reading and writing for oriented point clouds and meshes.
//!
//! PLY input may be ASCII or binary little endian. Clouds need per-vertex
//! normals (`nx ny nz` in PLY, `vn` records paired with `v` by order in OBJ);
//! a PLY `area` vertex property is used as the sample weight when present.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{FrameSequence, OrientedPointCloud, TimeMap};
use crate::mesh::TriMesh;
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            Some(e) if e == "ply" => Ok(MeshFormat::Ply),
            _ => Err(Error::Config(format!(
                "cannot infer mesh format from {}; use .obj or .ply",
                path.display()
            ))),
        }
    }
}

/// Raw contents of a file: vertex attributes and polygon index lists.
#[derive(Debug, Default)]
struct RawGeometry {
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
    areas: Option<Vec<f64>>,
    faces: Vec<Vec<u32>>,
}

pub fn read_point_cloud(path: &Path) -> Result<OrientedPointCloud> {
    let raw = read_raw(path)?;
    if raw.positions.is_empty() {
        return Err(Error::ingest(path, "file contains no vertices"));
    }
    if raw.normals.len() != raw.positions.len() {
        return Err(Error::ingest(
            path,
            format!(
                "missing normals: {} vertices but {} normals",
                raw.positions.len(),
                raw.normals.len()
            ),
        ));
    }
    let mut normals = Vec::with_capacity(raw.normals.len());
    for (i, n) in raw.normals.iter().enumerate() {
        let len = n.norm();
        if !(len.is_finite() && len > 1e-12) {
            return Err(Error::ingest(path, format!("normal {i} has zero length")));
        }
        normals.push(n / len);
    }
    let cloud = match raw.areas {
        Some(areas) => OrientedPointCloud::new(raw.positions, normals, areas),
        None => OrientedPointCloud::with_estimated_areas(raw.positions, normals),
    };
    cloud.map_err(|e| Error::ingest(path, e.to_string()))
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let raw = read_raw(path)?;
    let mut triangles = Vec::new();
    for face in &raw.faces {
        for k in 1..face.len().saturating_sub(1) {
            triangles.push([face[0], face[k], face[k + 1]]);
        }
    }
    TriMesh::new(raw.positions, triangles).map_err(|e| Error::ingest(path, e.to_string()))
}

fn read_raw(path: &Path) -> Result<RawGeometry> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match MeshFormat::from_path(path) {
        Ok(MeshFormat::Obj) => parse_obj(&mut reader, path),
        Ok(MeshFormat::Ply) => parse_ply(&mut reader, path),
        Err(_) => {
            // Sniff the magic when the extension is unknown.
            let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
            if head.starts_with(b"ply") {
                parse_ply(&mut reader, path)
            } else {
                parse_obj(&mut reader, path)
            }
        }
    }
}

fn parse_obj<R: BufRead>(reader: &mut R, path: &Path) -> Result<RawGeometry> {
    let mut raw = RawGeometry::default();
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let mut parts = line.split_whitespace();
        let bad = |what: &str| Error::ingest(path, format!("line {lineno}: {what}"));
        match parts.next() {
            Some("v") | Some("vn") => {
                let is_normal = line.trim_start().starts_with("vn");
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("malformed coordinate"))?;
                if coords.len() != 3 {
                    return Err(bad("expected three coordinates"));
                }
                let v = Vec3::new(coords[0], coords[1], coords[2]);
                if is_normal {
                    raw.normals.push(v);
                } else {
                    raw.positions.push(v);
                }
            }
            Some("f") => {
                let nv = raw.positions.len() as i64;
                let mut face = Vec::new();
                for tok in parts {
                    let idx: i64 = tok
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| bad("malformed face index"))?;
                    let resolved = if idx < 0 { nv + idx } else { idx - 1 };
                    if resolved < 0 || resolved >= nv {
                        return Err(bad("face index out of range"));
                    }
                    face.push(resolved as u32);
                }
                if face.len() < 3 {
                    return Err(bad("face with fewer than three vertices"));
                }
                raw.faces.push(face);
            }
            _ => {}
        }
    }
    Ok(raw)
}

#[derive(Clone, Copy, Debug)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Scalar::I8 => rd!(i8),
            Scalar::U8 => rd!(u8),
            Scalar::I16 => rd!(i16),
            Scalar::U16 => rd!(u16),
            Scalar::I32 => rd!(i32),
            Scalar::U32 => rd!(u32),
            Scalar::F32 => rd!(f32),
            Scalar::F64 => rd!(f64),
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_ply<R: BufRead>(reader: &mut R, path: &Path) -> Result<RawGeometry> {
    let bad = |what: String| Error::ingest(path, what);
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::ingest(path, "unexpected end of PLY header"));
        }
        Ok(line.trim().to_string())
    };
    if next_line(reader)? != "ply" {
        return Err(bad("missing PLY magic".into()));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(reader)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(bad(format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ct = Scalar::parse(ct).ok_or_else(|| bad(format!("unknown type {ct}")))?;
                let it = Scalar::parse(it).ok_or_else(|| bad(format!("unknown type {it}")))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(bad(format!("unrecognized header line '{l}'"))),
        }
    }
    let binary = binary.ok_or_else(|| bad("PLY header lacks a format line".into()))?;

    let mut ascii_tokens: Vec<String> = Vec::new();
    let mut ascii_pos = 0;
    if !binary {
        let mut rest = String::new();
        reader.read_to_string(&mut rest).map_err(|e| Error::io(path, e))?;
        ascii_tokens = rest.split_whitespace().map(str::to_string).collect();
    }
    let truncated = || Error::ingest(path, "PLY body is truncated");
    let mut read_value = |reader: &mut R, ty: Scalar| -> Result<f64> {
        if binary {
            ty.read_le(reader).map_err(|_| truncated())
        } else {
            let tok = ascii_tokens.get(ascii_pos).ok_or_else(truncated)?;
            ascii_pos += 1;
            tok.parse::<f64>()
                .map_err(|_| Error::ingest(path, format!("bad PLY value '{tok}'")))
        }
    };

    let mut raw = RawGeometry::default();
    for el in &elements {
        let mut columns: HashMap<&str, Vec<f64>> = HashMap::new();
        for _ in 0..el.count {
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = read_value(reader, *ty)?;
                        columns.entry(name.as_str()).or_default().push(v);
                    }
                    Property::List(name, ct, it) => {
                        let n = read_value(reader, *ct)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(read_value(reader, *it)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            raw.faces.push(items.into_iter().map(|v| v as u32).collect());
                        }
                    }
                }
            }
        }
        if el.name == "vertex" && el.count > 0 {
            let col = |n: &str| columns.get(n).filter(|c| c.len() == el.count);
            let (x, y, z) = match (col("x"), col("y"), col("z")) {
                (Some(x), Some(y), Some(z)) => (x, y, z),
                _ => return Err(bad("vertex element lacks x/y/z".into())),
            };
            raw.positions = (0..el.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
            if let (Some(nx), Some(ny), Some(nz)) = (col("nx"), col("ny"), col("nz")) {
                raw.normals = (0..el.count).map(|i| Vec3::new(nx[i], ny[i], nz[i])).collect();
            }
            raw.areas = col("area").cloned();
        }
    }
    let nv = raw.positions.len() as u32;
    if raw.faces.iter().flatten().any(|&i| i >= nv) {
        return Err(bad("face index out of range".into()));
    }
    Ok(raw)
}

/// Writes a cloud as binary little-endian PLY with `nx ny nz area`.
pub fn write_point_cloud(path: &Path, cloud: &OrientedPointCloud) -> Result<()> {
    let mut out = Vec::new();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\n\
         property double area\nend_header\n",
        cloud.len()
    );
    out.extend_from_slice(header.as_bytes());
    for ((p, n), a) in cloud.points().iter().zip(cloud.normals()).zip(cloud.areas()) {
        for v in p.iter().chain(n.iter()).chain(std::iter::once(a)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// OBJ text with `v`/`f` records. Coordinates use the shortest decimal form
/// that round-trips exactly.
pub fn mesh_to_obj(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 20);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Binary little-endian PLY bytes with double vertices and `uint` indices.
pub fn mesh_to_ply(mesh: &TriMesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    let mut out = header.into_bytes();
    for v in &mesh.vertices {
        for c in v.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn export_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let bytes = match format {
        MeshFormat::Obj => mesh_to_obj(mesh).into_bytes(),
        MeshFormat::Ply => mesh_to_ply(mesh),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads frame files in the given label order; times come from `time_map`.
pub fn load_frames(paths: &[PathBuf], time_map: &TimeMap) -> Result<FrameSequence> {
    if paths.is_empty() {
        return Err(Error::Domain("no frame files given".into()));
    }
    let times = time_map.times(paths.len())?;
    let frames = paths
        .iter()
        .map(|p| read_point_cloud(p))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::with_padded_bbox(frames, times)
}
