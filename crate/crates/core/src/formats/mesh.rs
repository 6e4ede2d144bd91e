//! PLY (ascii and binary little-endian) and Wavefront OBJ triangle meshes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh::TriangleMesh;

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

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
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
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

const PLY: &str = "PLY";

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::parse(PLY, line, message)
}

/// Splits off the header; returns its lines and the body offset.
fn ply_header(data: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &data[pos..];
        let Some(nl) = rest.iter().position(|&c| c == b'\n') else {
            return Err(perr(lines.len() + 1, "header is missing end_header"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| perr(lines.len() + 1, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        pos += nl + 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            return Ok((lines, pos));
        }
    }
}

fn parse_header(lines: &[String]) -> Result<(PlyFormat, Vec<Element>)> {
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(perr(1, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let ln = i + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(perr(ln, format!("unsupported format '{other}'"))),
                })
            }
            ["element", name, count] => {
                let count = count
                    .parse::<usize>()
                    .map_err(|_| perr(ln, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(ln, "property before any element"))?;
                let ct = Scalar::parse(ct).filter(|s| s.is_integer());
                let it = Scalar::parse(it);
                match (ct, it) {
                    (Some(ct), Some(it)) => el.properties.push(Property::List(name.to_string(), ct, it)),
                    _ => return Err(perr(ln, "bad list property types")),
                }
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(ln, "property before any element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| perr(ln, format!("unknown property type '{ty}'")))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(perr(ln, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| perr(2, "missing format line"))?;
    Ok((format, elements))
}

/// Yields property values of one element record at a time.
trait Source {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
    fn end_record(&mut self) -> Result<()>;
}

struct AsciiSource<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    tokens: Vec<&'a str>,
    cursor: usize,
    /// Body line index of the current tokens.
    line: usize,
    /// File line number of the first body line.
    first_line: usize,
}

impl<'a> AsciiSource<'a> {
    fn file_line(&self) -> usize {
        self.first_line + self.line
    }

    fn next_token(&mut self) -> Result<&'a str> {
        while self.cursor >= self.tokens.len() {
            let (i, l) = self
                .lines
                .next()
                .ok_or_else(|| perr(self.file_line(), "unexpected end of data"))?;
            self.line = i;
            self.tokens = l.split_whitespace().collect();
            self.cursor = 0;
        }
        self.cursor += 1;
        Ok(self.tokens[self.cursor - 1])
    }
}

impl Source for AsciiSource<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let t = self.next_token()?;
        let v = if ty.is_integer() {
            t.parse::<i64>().map(|v| v as f64).ok()
        } else {
            t.parse::<f64>().ok()
        };
        v.ok_or_else(|| perr(self.file_line(), format!("cannot parse '{t}'")))
    }

    fn end_record(&mut self) -> Result<()> {
        if self.cursor != self.tokens.len() {
            return Err(perr(self.file_line(), "extra values on line"));
        }
        Ok(())
    }
}

struct BinarySource<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Source for BinarySource<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.data.len() {
            return Err(Error::parse(PLY, 0, format!("binary body truncated at byte {}", self.pos)));
        }
        let v = ty.read_le(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }
}

fn read_body(src: &mut dyn Source, elements: &[Element], body_len: usize) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz: Vec<Option<usize>> = ["x", "y", "z"]
            .iter()
            .map(|n| {
                el.properties
                    .iter()
                    .position(|p| matches!(p, Property::Scalar(name, _) if name == n))
            })
            .collect();
        if is_vertex && xyz.iter().any(|i| i.is_none()) {
            return Err(perr(0, "vertex element lacks x, y or z"));
        }
        let list = el
            .properties
            .iter()
            .position(|p| matches!(p, Property::List(name, _, _) if name == "vertex_indices" || name == "vertex_index"));
        if is_face && list.is_none() {
            return Err(perr(0, "face element lacks vertex_indices"));
        }
        // every record needs at least one byte or token
        let cap = el.count.min(body_len);
        if is_vertex {
            vertices.reserve(cap);
        } else if is_face {
            faces.reserve(cap);
        }
        for r in 0..el.count {
            let mut pos = [0.0; 3];
            let mut tri = None;
            for (pi, p) in el.properties.iter().enumerate() {
                match p {
                    Property::Scalar(_, ty) => {
                        let v = src.scalar(*ty)?;
                        if is_vertex {
                            for k in 0..3 {
                                if xyz[k] == Some(pi) {
                                    pos[k] = v;
                                }
                            }
                        }
                    }
                    Property::List(_, ct, it) => {
                        let n = src.scalar(*ct)?;
                        if !(n >= 0.0) {
                            return Err(perr(0, format!("{} {r}: negative list length", el.name)));
                        }
                        let n = n as usize;
                        if is_face && Some(pi) == list && n != 3 {
                            return Err(perr(
                                0,
                                format!("face {r} has {n} vertices; only triangles are supported"),
                            ));
                        }
                        let mut idx = [0usize; 3];
                        for k in 0..n {
                            let v = src.scalar(*it)?;
                            if is_face && Some(pi) == list {
                                if !(v >= 0.0 && v.fract() == 0.0) {
                                    return Err(perr(0, format!("face {r} has an invalid vertex index")));
                                }
                                idx[k] = v as usize;
                            }
                        }
                        if is_face && Some(pi) == list {
                            tri = Some(idx);
                        }
                    }
                }
            }
            src.end_record()?;
            if is_vertex {
                vertices.push(Vec3::from(pos));
            } else if let (true, Some(t)) = (is_face, tri) {
                faces.push(t);
            }
        }
    }
    Ok((vertices, faces))
}

/// Parses a PLY file. Faces must be triangles; a polygon with any other
/// vertex count is rejected with its face index.
pub fn parse_ply(data: &[u8]) -> Result<TriangleMesh> {
    let (lines, body) = ply_header(data)?;
    let (format, elements) = parse_header(&lines)?;
    let rest = &data[body..];
    let (vertices, faces) = match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(rest).map_err(|_| perr(lines.len() + 1, "ascii body is not UTF-8"))?;
            let mut src = AsciiSource {
                lines: text.lines().enumerate(),
                tokens: Vec::new(),
                cursor: 0,
                line: 0,
                first_line: lines.len() + 1,
            };
            read_body(&mut src, &elements, rest.len())?
        }
        PlyFormat::BinaryLittleEndian => {
            let mut src = BinarySource { data: rest, pos: 0 };
            read_body(&mut src, &elements, rest.len())?
        }
    };
    TriangleMesh::new(vertices, faces)
}

/// ASCII PLY with shortest round-trip float formatting.
pub fn write_ply_ascii(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply\nformat ascii 1.0");
    let _ = writeln!(s, "element vertex {}", mesh.vertices().len());
    let _ = writeln!(s, "property double x\nproperty double y\nproperty double z");
    let _ = writeln!(s, "element face {}", mesh.face_count());
    let _ = writeln!(s, "property list uchar int vertex_indices\nend_header");
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

/// Binary little-endian PLY with double vertices.
pub fn write_ply_binary(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.face_count()
    )
    .into_bytes();
    for v in mesh.vertices() {
        for c in v.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

const OBJ: &str = "OBJ";

fn obj_index(token: &str, n_vertices: usize, line: usize) -> Result<usize> {
    let first = token.split('/').next().unwrap_or("");
    let i: i64 = first
        .parse()
        .map_err(|_| Error::parse(OBJ, line, format!("bad vertex reference '{token}'")))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        n_vertices as i64 + i
    } else {
        -1
    };
    if resolved < 0 {
        return Err(Error::parse(OBJ, line, format!("vertex reference '{token}' is out of range")));
    }
    Ok(resolved as usize)
}

/// Parses `v` and `f` records of a Wavefront OBJ file; other records are
/// ignored. Faces must be triangles.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let vals: Vec<&str> = tok.collect();
                if vals.len() < 3 || vals.len() > 4 {
                    return Err(Error::parse(OBJ, line, "vertex needs 3 coordinates"));
                }
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = vals[k]
                        .parse()
                        .map_err(|_| Error::parse(OBJ, line, format!("cannot parse '{}'", vals[k])))?;
                }
                vertices.push(Vec3::from(p));
            }
            Some("f") => {
                let refs: Vec<&str> = tok.collect();
                if refs.len() != 3 {
                    return Err(Error::parse(
                        OBJ,
                        line,
                        format!("face {} has {} vertices; only triangles are supported", faces.len(), refs.len()),
                    ));
                }
                let mut t = [0usize; 3];
                for k in 0..3 {
                    t[k] = obj_index(refs[k], vertices.len(), line)?;
                }
                faces.push(t);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}
