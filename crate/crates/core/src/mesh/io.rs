//! PLY (ascii / binary little-endian) and OBJ reading; PLY and textured
//! OBJ+MTL+PNG writing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::warn;

use super::{IndexedMesh, Point3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug)]
pub struct LoadedMesh {
    pub mesh: IndexedMesh,
    /// Faces dropped because they repeated a vertex index.
    pub dropped_faces: usize,
}

/// Loads a `.ply` or `.obj` mesh. Polygons are fan-triangulated and
/// degenerate faces are dropped with a warning.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let (vertices, faces) = match ext.as_deref() {
        Some("ply") => read_ply(path)?,
        Some("obj") => read_obj(path)?,
        _ => return Err(Error::parse(path, "unsupported mesh extension (want .ply or .obj)")),
    };
    let (mesh, dropped) = IndexedMesh::from_raw(vertices, faces)?;
    if dropped > 0 {
        warn!("{}: dropped {dropped} degenerate faces", path.display());
    }
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh(format!("{}: no faces after cleaning", path.display())));
    }
    Ok(LoadedMesh {
        mesh,
        dropped_faces: dropped,
    })
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
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn read_ply(path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let next_line = |r: &mut BufReader<File>, line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, "unexpected end of header"));
        }
        Ok(())
    };
    next_line(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse(path, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut r, &mut line)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(Error::parse(path, format!("unsupported ply format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before element"))?;
                let (count, item) = Scalar::parse(count)
                    .zip(Scalar::parse(item))
                    .ok_or_else(|| Error::parse(path, format!("bad list types in '{}'", line.trim())))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(path, format!("bad property type {ty}")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(path, format!("bad header line '{}'", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(path, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let mut cursor = Cursor::new(&body, format, path);
    for el in &elements {
        let xyz: Vec<Option<usize>> = ["x", "y", "z"]
            .iter()
            .map(|n| {
                el.props
                    .iter()
                    .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
            })
            .collect();
        let face_list = el.props.iter().position(|p| {
            matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index")
        });
        let mut values = vec![0f64; el.props.len()];
        let mut list = Vec::new();
        for _ in 0..el.count {
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar { ty, .. } => values[pi] = cursor.scalar(*ty)?,
                    Property::List { count, item, .. } => {
                        let n = cursor.scalar(*count)? as usize;
                        if Some(pi) == face_list {
                            list.clear();
                            for _ in 0..n {
                                list.push(cursor.scalar(*item)? as usize);
                            }
                        } else {
                            for _ in 0..n {
                                cursor.scalar(*item)?;
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                let get = |k: usize| xyz[k].map(|i| values[i]).unwrap_or(0.0);
                vertices.push(Point3::new(get(0), get(1), get(2)));
            } else if el.name == "face" && face_list.is_some() {
                for k in 1..list.len().saturating_sub(1) {
                    faces.push([list[0], list[k], list[k + 1]]);
                }
            }
            cursor.end_record();
        }
    }
    Ok((vertices, faces))
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
    format: PlyFormat,
    path: &'a Path,
    tokens: std::vec::IntoIter<&'a str>,
}

impl<'a> Cursor<'a> {
    fn new(body: &'a [u8], format: PlyFormat, path: &'a Path) -> Self {
        Self {
            body,
            pos: 0,
            format,
            path,
            tokens: Vec::new().into_iter(),
        }
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        match self.format {
            PlyFormat::BinaryLittleEndian => {
                let n = ty.size();
                if self.pos + n > self.body.len() {
                    return Err(Error::parse(self.path, "truncated binary body"));
                }
                let v = ty.read_le(&self.body[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
            PlyFormat::Ascii => loop {
                if let Some(t) = self.tokens.next() {
                    return t
                        .parse::<f64>()
                        .map_err(|_| Error::parse(self.path, format!("bad number '{t}'")));
                }
                if self.pos >= self.body.len() {
                    return Err(Error::parse(self.path, "truncated ascii body"));
                }
                let rest = &self.body[self.pos..];
                let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
                let line = std::str::from_utf8(&rest[..end])
                    .map_err(|_| Error::parse(self.path, "non-utf8 ascii body"))?;
                self.pos += end + 1;
                self.tokens = line.split_whitespace().collect::<Vec<_>>().into_iter();
            },
        }
    }

    fn end_record(&mut self) {
        // ascii records are one per line; discard any unread tokens
        self.tokens = Vec::new().into_iter();
    }
}

fn read_obj(path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(path, format!("line {}: bad vertex", ln + 1)))?;
                if c.len() != 3 {
                    return Err(Error::parse(path, format!("line {}: vertex needs 3 coordinates", ln + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(path, format!("line {}: bad face index '{t}'", ln + 1)))?;
                    let i = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if i < 0 {
                        return Err(Error::parse(path, format!("line {}: face index out of range", ln + 1)));
                    }
                    idx.push(i as usize);
                }
                for k in 1..idx.len().saturating_sub(1) {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// Writes a PLY with double-precision vertices and optional per-face colors.
pub fn save_ply(
    mesh: &IndexedMesh,
    path: impl AsRef<Path>,
    format: PlyFormat,
    face_colors: Option<&[[u8; 3]]>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(c) = face_colors {
        if c.len() != mesh.faces.len() {
            return Err(Error::InvalidInput("face color count does not match face count".into()));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )
    .map_err(io)?;
    if face_colors.is_some() {
        w.write_all(b"property uchar red\nproperty uchar green\nproperty uchar blue\n")
            .map_err(io)?;
    }
    w.write_all(b"end_header\n").map_err(io)?;
    match format {
        PlyFormat::Ascii => {
            for v in &mesh.vertices {
                // {:?} prints the shortest representation that round-trips
                writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z).map_err(io)?;
            }
            for (fi, f) in mesh.faces.iter().enumerate() {
                write!(w, "3 {} {} {}", f[0], f[1], f[2]).map_err(io)?;
                if let Some(c) = face_colors {
                    write!(w, " {} {} {}", c[fi][0], c[fi][1], c[fi][2]).map_err(io)?;
                }
                writeln!(w).map_err(io)?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in &mesh.vertices {
                for c in v.iter() {
                    w.write_all(&c.to_le_bytes()).map_err(io)?;
                }
            }
            for (fi, f) in mesh.faces.iter().enumerate() {
                w.write_all(&[3u8]).map_err(io)?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes()).map_err(io)?;
                }
                if let Some(c) = face_colors {
                    w.write_all(&c[fi]).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone)]
pub struct TexturedMeshFiles {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub png: PathBuf,
}

/// Writes `path` (OBJ), a sibling MTL and a PNG atlas. `uvs` holds the
/// three corner texture coordinates of every face in `[0,1]²` (OBJ
/// convention, v pointing up).
pub fn save_textured_mesh(
    mesh: &IndexedMesh,
    atlas: &RgbImage,
    uvs: &[[[f64; 2]; 3]],
    path: impl AsRef<Path>,
) -> Result<TexturedMeshFiles> {
    let obj = path.as_ref().to_path_buf();
    if uvs.len() != mesh.faces.len() {
        return Err(Error::InvalidInput("one uv triple per face required".into()));
    }
    for (f, tri) in uvs.iter().enumerate() {
        for uv in tri {
            if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                return Err(Error::UvOutOfRange {
                    face: f,
                    u: uv[0],
                    v: uv[1],
                });
            }
        }
    }
    let stem = obj
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mesh")
        .to_string();
    let mtl = obj.with_extension("mtl");
    let png = obj.with_file_name(format!("{stem}_atlas.png"));
    let png_name = png.file_name().unwrap().to_string_lossy().into_owned();
    let mtl_name = mtl.file_name().unwrap().to_string_lossy().into_owned();

    atlas.save(&png).map_err(|e| Error::Image {
        path: png.clone(),
        source: e,
    })?;
    std::fs::write(
        &mtl,
        format!("newmtl atlas\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {png_name}\n"),
    )
    .map_err(|e| Error::io(&mtl, e))?;

    let file = File::create(&obj).map_err(|e| Error::io(&obj, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&obj, e);
    writeln!(w, "mtllib {mtl_name}").map_err(io)?;
    for v in &mesh.vertices {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z).map_err(io)?;
    }
    let mut vt_index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut corner_vt = Vec::with_capacity(uvs.len());
    for tri in uvs {
        let mut ids = [0usize; 3];
        for (k, uv) in tri.iter().enumerate() {
            let key = (uv[0].to_bits(), uv[1].to_bits());
            let next = vt_index.len();
            ids[k] = *vt_index.entry(key).or_insert_with(|| {
                // written lazily below in insertion order
                next
            });
            if ids[k] == next {
                writeln!(w, "vt {:?} {:?}", uv[0], uv[1]).map_err(io)?;
            }
        }
        corner_vt.push(ids);
    }
    writeln!(w, "usemtl atlas").map_err(io)?;
    for (f, t) in mesh.faces.iter().zip(&corner_vt) {
        writeln!(
            w,
            "f {}/{} {}/{} {}/{}",
            f[0] + 1,
            t[0] + 1,
            f[1] + 1,
            t[1] + 1,
            f[2] + 1,
            t[2] + 1
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(TexturedMeshFiles { obj, mtl, png })
}
