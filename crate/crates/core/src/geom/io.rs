//! OBJ and PLY mesh reading and writing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::InvalidArgument(format!(
                "{}: unsupported mesh extension (expected .obj or .ply)",
                path.display()
            ))),
        }
    }
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = path.display().to_string();
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => parse_obj(&String::from_utf8_lossy(&bytes), &name),
        MeshFormat::Ply => parse_ply(&bytes, &name),
    }
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    write_tagged_mesh(path, mesh, None)
}

/// Writes a mesh with an optional integer tag per triangle (`element` face
/// property in PLY, `g element_<tag>` groups in OBJ).
pub fn write_tagged_mesh(path: impl AsRef<Path>, mesh: &TriMesh, tags: Option<&[u32]>) -> Result<()> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    match format {
        MeshFormat::Obj => write_obj(&mut w, mesh, tags)?,
        MeshFormat::Ply => write_ply(&mut w, mesh, tags)?,
    }
    w.flush()?;
    Ok(())
}

pub fn parse_obj(text: &str, name: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for v in &mut c {
                    *v = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(name, ln + 1, "bad vertex"))?;
                }
                vertices.push(Vec3::from(c));
            }
            Some("f") => {
                let idx = it
                    .map(|tok| {
                        // `v`, `v/vt`, `v//vn` or `v/vt/vn`; negative indices are relative.
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| Error::parse(name, ln + 1, format!("bad face index {tok:?}")))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(Error::parse(name, ln + 1, format!("bad face index {tok:?}")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<u32>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(name, ln + 1, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

fn write_obj(w: &mut impl Write, mesh: &TriMesh, tags: Option<&[u32]>) -> Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    let mut group = None;
    for (i, t) in mesh.triangles.iter().enumerate() {
        if let Some(tags) = tags {
            if group != Some(tags[i]) {
                group = Some(tags[i]);
                writeln!(w, "g element_{}", tags[i])?;
            }
        }
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

fn write_ply(w: &mut impl Write, mesh: &TriMesh, tags: Option<&[u32]>) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    if tags.is_some() {
        writeln!(w, "property int element")?;
    }
    writeln!(w, "end_header")?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
    }
    for (i, t) in mesh.triangles.iter().enumerate() {
        match tags {
            Some(tags) => writeln!(w, "3 {} {} {} {}", t[0], t[1], t[2], tags[i])?,
            None => writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?,
        }
    }
    Ok(())
}

/// Writes points with normals as an ASCII PLY vertex-only file.
pub fn write_point_cloud(path: impl AsRef<Path>, points: &[Vec3], normals: &[Vec3]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path.as_ref())?);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    writeln!(w, "property double nx\nproperty double ny\nproperty double nz\nend_header")?;
    for (p, n) in points.iter().zip(normals) {
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

#[derive(Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

trait Values {
    fn next(&mut self, ty: Scalar) -> Option<f64>;
}

struct AsciiValues<'a>(std::str::SplitAsciiWhitespace<'a>);

impl Values for AsciiValues<'_> {
    fn next(&mut self, _ty: Scalar) -> Option<f64> {
        self.0.next()?.parse().ok()
    }
}

struct BinaryValues<'a> {
    bytes: &'a [u8],
    pos: usize,
    big: bool,
}

impl Values for BinaryValues<'_> {
    fn next(&mut self, ty: Scalar) -> Option<f64> {
        let n = ty.size();
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(self.bytes.get(self.pos..self.pos + n)?);
        self.pos += n;
        if self.big {
            buf[..n].reverse();
        }
        Some(match ty {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

pub fn parse_ply(bytes: &[u8], name: &str) -> Result<TriMesh> {
    let end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| Error::parse(name, 1, "missing end_header"))?;
    let mut body_start = end + b"end_header".len();
    // Header terminator is "\n" or "\r\n".
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = String::from_utf8_lossy(&bytes[..end]);
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(name, 1, "missing ply magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::parse(name, ln + 1, msg.to_string());
        match toks.as_slice() {
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::Little),
            ["format", "binary_big_endian", _] => encoding = Some(Encoding::Big),
            ["element", el, count] => elements.push(Element {
                name: el.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, pname] => {
                let ct = Scalar::parse(ct).ok_or_else(|| bad("bad list count type"))?;
                let it = Scalar::parse(it).ok_or_else(|| bad("bad list item type"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element"))?
                    .props
                    .push(Property::List(pname.to_string(), ct, it));
            }
            ["property", ty, pname] => {
                let ty = Scalar::parse(ty).ok_or_else(|| bad("bad property type"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element"))?
                    .props
                    .push(Property::Scalar(pname.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(bad("unrecognized header line")),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(name, 2, "missing format line"))?;
    let body = &bytes[body_start..];
    let text;
    let mut values: Box<dyn Values> = match encoding {
        Encoding::Ascii => {
            text = String::from_utf8_lossy(body);
            Box::new(AsciiValues(text.split_ascii_whitespace()))
        }
        Encoding::Little | Encoding::Big => Box::new(BinaryValues {
            bytes: body,
            pos: 0,
            big: encoding == Encoding::Big,
        }),
    };
    let truncated = || Error::parse(name, 0, "truncated body");

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut face: Vec<u32> = Vec::new();
            for prop in &el.props {
                match prop {
                    Property::Scalar(pname, ty) => {
                        let v = values.next(*ty).ok_or_else(truncated)?;
                        if el.name == "vertex" {
                            match pname.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List(pname, ct, it) => {
                        let n = values.next(*ct).ok_or_else(truncated)? as usize;
                        let keep = el.name == "face"
                            && (pname == "vertex_indices" || pname == "vertex_index");
                        for _ in 0..n {
                            let v = values.next(*it).ok_or_else(truncated)?;
                            if keep {
                                face.push(v as u32);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => vertices.push(Vec3::from(xyz)),
                "face" => {
                    for k in 1..face.len().saturating_sub(1) {
                        triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
