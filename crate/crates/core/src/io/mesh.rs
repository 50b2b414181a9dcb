//! OBJ and PLY (ASCII and binary little-endian) triangle meshes.

use std::fs;
use std::path::Path;

use crate::error::{Error, MeshError, Result};
use crate::kinematics::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    /// Binary little-endian PLY with double-precision coordinates.
    Ply,
    PlyAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

impl TriangleMesh {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(format!("face {i} references a vertex beyond {n}"));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(format!("face {i} is degenerate"));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err("label count differs from vertex count".into());
            }
        }
        Ok(())
    }
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = fs::read(path)?;
    let name = path.display().to_string();
    match MeshFormat::from_path(path) {
        Some(MeshFormat::Obj) => parse_obj(&bytes, &name),
        Some(_) => parse_ply(&bytes, &name),
        None if bytes.starts_with(b"ply") => parse_ply(&bytes, &name),
        None => parse_obj(&bytes, &name),
    }
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, format: MeshFormat) -> Result<()> {
    fs::write(path, encode_mesh(mesh, format))?;
    Ok(())
}

pub fn encode_mesh(mesh: &TriangleMesh, format: MeshFormat) -> Vec<u8> {
    match format {
        MeshFormat::Obj => encode_obj(mesh),
        MeshFormat::Ply => encode_ply(mesh, true),
        MeshFormat::PlyAscii => encode_ply(mesh, false),
    }
}

fn syntax(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Mesh(MeshError {
        path: path.to_string(),
        line,
        message: message.into(),
    })
}

fn finish(mesh: TriangleMesh, path: &str) -> Result<TriangleMesh> {
    mesh.validate().map_err(|m| syntax(path, 0, m))?;
    Ok(mesh)
}

// ---------------------------------------------------------------- OBJ

pub fn parse_obj(bytes: &[u8], path: &str) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| syntax(path, 0, format!("not UTF-8: {e}")))?;
    let mut mesh = TriangleMesh::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in p.iter_mut() {
                    let t = tok.next().ok_or_else(|| syntax(path, line_no, "vertex needs 3 coordinates"))?;
                    *c = t
                        .parse()
                        .map_err(|_| syntax(path, line_no, format!("bad coordinate '{t}'")))?;
                }
                mesh.vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let k: i64 = head
                        .parse()
                        .map_err(|_| syntax(path, line_no, format!("bad face index '{t}'")))?;
                    let n = mesh.vertices.len() as i64;
                    let z = if k > 0 { k - 1 } else { n + k };
                    if k == 0 || z < 0 || z >= n {
                        return Err(syntax(path, line_no, format!("face index {k} out of range")));
                    }
                    idx.push(z as usize);
                }
                if idx.len() < 3 {
                    return Err(syntax(path, line_no, "face needs at least 3 vertices"));
                }
                for w in 1..idx.len() - 1 {
                    let f = [idx[0], idx[w], idx[w + 1]];
                    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                        return Err(syntax(path, line_no, "degenerate face"));
                    }
                    mesh.faces.push(f);
                }
            }
            _ => {}
        }
    }
    finish(mesh, path)
}

fn encode_obj(mesh: &TriangleMesh) -> Vec<u8> {
    use std::fmt::Write;
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s.into_bytes()
}

// ---------------------------------------------------------------- PLY

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
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn take_line(bytes: &[u8], pos: &mut usize, line_no: &mut usize) -> Option<(usize, String)> {
    if *pos >= bytes.len() {
        return None;
    }
    let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
    let s = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
    *pos = (end + 1).min(bytes.len());
    *line_no += 1;
    Some((*line_no, s))
}

pub fn parse_ply(bytes: &[u8], path: &str) -> Result<TriangleMesh> {
    let mut pos = 0;
    let mut line_no = 0;
    match take_line(bytes, &mut pos, &mut line_no) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(syntax(path, 1, "missing 'ply' magic")),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let header_end_line;
    loop {
        let (ln, line) = take_line(bytes, &mut pos, &mut line_no).ok_or_else(|| syntax(path, line_no, "header not terminated"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first().copied() {
            Some("format") => {
                binary = Some(match t.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => return Err(syntax(path, ln, format!("unsupported format {other:?}"))),
                })
            }
            Some("element") => {
                let (name, count) = match (t.get(1), t.get(2).and_then(|c| c.parse().ok())) {
                    (Some(n), Some(c)) => (n.to_string(), c),
                    _ => return Err(syntax(path, ln, "malformed element line")),
                };
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| syntax(path, ln, "property before any element"))?;
                let prop = if t.get(1) == Some(&"list") {
                    match (t.get(2).and_then(|s| Scalar::parse(s)), t.get(3).and_then(|s| Scalar::parse(s)), t.get(4)) {
                        (Some(c), Some(i), Some(n)) => Property::List(n.to_string(), c, i),
                        _ => return Err(syntax(path, ln, "malformed list property")),
                    }
                } else {
                    match (t.get(1).and_then(|s| Scalar::parse(s)), t.get(2)) {
                        (Some(s), Some(n)) => Property::Scalar(n.to_string(), s),
                        _ => return Err(syntax(path, ln, "malformed property")),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => {
                header_end_line = ln;
                break;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(syntax(path, ln, format!("unknown header keyword '{other}'"))),
        }
    }
    let binary = binary.ok_or_else(|| syntax(path, header_end_line, "missing format line"))?;

    let mut mesh = TriangleMesh::default();
    let mut labels = Vec::new();
    let mut has_labels = false;
    let mut record = |el: &Element, values: Vec<Vec<f64>>, loc: usize, mesh: &mut TriangleMesh| -> Result<()> {
        match el.name.as_str() {
            "vertex" => {
                let mut p = [f64::NAN; 3];
                for (prop, v) in el.props.iter().zip(&values) {
                    if let Property::Scalar(n, _) = prop {
                        match n.as_str() {
                            "x" => p[0] = v[0],
                            "y" => p[1] = v[0],
                            "z" => p[2] = v[0],
                            "label" => {
                                has_labels = true;
                                labels.push(v[0] as u32);
                            }
                            _ => {}
                        }
                    }
                }
                if p.iter().any(|c| c.is_nan()) {
                    return Err(syntax(path, loc, "vertex lacks x/y/z"));
                }
                mesh.vertices.push(p);
            }
            "face" => {
                let list = el
                    .props
                    .iter()
                    .zip(&values)
                    .find(|(p, _)| matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"))
                    .map(|(_, v)| v)
                    .ok_or_else(|| syntax(path, loc, "face lacks vertex_indices"))?;
                if list.len() < 3 {
                    return Err(syntax(path, loc, "face needs at least 3 vertices"));
                }
                for w in 1..list.len() - 1 {
                    let f = [list[0], list[w], list[w + 1]];
                    if f.iter().any(|&x| x < 0.0) {
                        return Err(syntax(path, loc, "negative face index"));
                    }
                    mesh.faces.push([f[0] as usize, f[1] as usize, f[2] as usize]);
                }
            }
            _ => {}
        }
        Ok(())
    };

    if binary {
        let mut off = pos;
        for el in &elements {
            for _ in 0..el.count {
                let at = off;
                let mut values = Vec::with_capacity(el.props.len());
                for prop in &el.props {
                    let take = |off: &mut usize, s: Scalar| -> Result<f64> {
                        let end = *off + s.size();
                        if end > bytes.len() {
                            return Err(syntax(path, *off, "unexpected end of binary data"));
                        }
                        let v = s.read_le(&bytes[*off..end]);
                        *off = end;
                        Ok(v)
                    };
                    match prop {
                        Property::Scalar(_, s) => values.push(vec![take(&mut off, *s)?]),
                        Property::List(_, c, i) => {
                            let n = take(&mut off, *c)? as usize;
                            let mut l = Vec::with_capacity(n);
                            for _ in 0..n {
                                l.push(take(&mut off, *i)?);
                            }
                            values.push(l);
                        }
                    }
                }
                record(el, values, at, &mut mesh)?;
            }
        }
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        let mut lines = text.lines().enumerate().map(|(i, l)| (header_end_line + 1 + i, l));
        for el in &elements {
            for _ in 0..el.count {
                let (ln, line) = lines
                    .next()
                    .ok_or_else(|| syntax(path, line_no, format!("missing {} data", el.name)))?;
                let mut tok = line.split_whitespace();
                let mut num = |what: &str| -> Result<f64> {
                    let t = tok.next().ok_or_else(|| syntax(path, ln, format!("missing {what}")))?;
                    t.parse().map_err(|_| syntax(path, ln, format!("bad number '{t}'")))
                };
                let mut values = Vec::with_capacity(el.props.len());
                for prop in &el.props {
                    match prop {
                        Property::Scalar(n, _) => values.push(vec![num(n)?]),
                        Property::List(n, _, _) => {
                            let k = num(n)? as usize;
                            let mut l = Vec::with_capacity(k);
                            for _ in 0..k {
                                l.push(num(n)?);
                            }
                            values.push(l);
                        }
                    }
                }
                record(el, values, ln, &mut mesh)?;
            }
        }
    }
    if has_labels {
        mesh.labels = Some(labels);
    }
    finish(mesh, path)
}

fn encode_ply(mesh: &TriangleMesh, binary: bool) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = String::from("ply\n");
    header += if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    };
    header += &format!(
        "element vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.vertices.len()
    );
    if mesh.labels.is_some() {
        header += "property uint label\n";
    }
    header += &format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.faces.len()
    );
    out.extend_from_slice(header.as_bytes());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let label = mesh.labels.as_ref().map(|l| l[i]);
        if binary {
            v.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
            if let Some(l) = label {
                out.extend_from_slice(&l.to_le_bytes());
            }
        } else {
            let mut line = format!("{} {} {}", v[0], v[1], v[2]);
            if let Some(l) = label {
                line += &format!(" {l}");
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        }
    }
    for f in &mesh.faces {
        if binary {
            out.push(3);
            f.iter().for_each(|&i| out.extend_from_slice(&(i as i32).to_le_bytes()));
        } else {
            out.extend_from_slice(format!("3 {} {} {}\n", f[0], f[1], f[2]).as_bytes());
        }
    }
    out
}
