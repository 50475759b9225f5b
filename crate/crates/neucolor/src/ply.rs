//! Binary little-endian PLY with float positions, byte colors and
//! `uchar`-counted `int` face lists.

use std::path::Path;

use neucolor_core::dataset::quantize;
use neucolor_core::mesher::ColoredMesh;

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};

pub fn encode_ply(mesh: &ColoredMesh) -> Vec<u8> {
    let has_color = mesh.colors.len() == mesh.vertices.len() && !mesh.vertices.is_empty();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", mesh.vertices.len());
    header += "property float x\nproperty float y\nproperty float z\n";
    if has_color || mesh.vertices.is_empty() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += &format!("element face {}\n", mesh.triangles.len());
    header += "property list uchar int vertex_indices\nend_header\n";
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if has_color {
            out.extend(mesh.colors[i].map(quantize));
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn write_ply(mesh: &ColoredMesh, path: &Path) -> Result<()> {
    atomic_write(path, &encode_ply(mesh))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uchar" | "uint8" => Scalar::U8,
            "char" | "int8" => Scalar::I8,
            "ushort" | "uint16" => Scalar::U16,
            "short" | "int16" => Scalar::I16,
            "uint" | "uint32" => Scalar::U32,
            "int" | "int32" => Scalar::I32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 | Scalar::I8 => 1,
            Scalar::U16 | Scalar::I16 => 2,
            Scalar::U32 | Scalar::I32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::U8 => b[0] as f64,
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("eight bytes")),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parses binary little-endian PLY. Colors are returned in `[0, 1]`
/// (`byte / 255`); meshes without colors get an empty color list.
pub fn decode_ply(bytes: &[u8], origin: &Path) -> Result<ColoredMesh> {
    let bad = |m: String| Error::format(origin, m);
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("not a PLY file".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (c, i) = (
                    Scalar::parse(c).ok_or_else(|| bad(format!("bad type {c}")))?,
                    Scalar::parse(i).ok_or_else(|| bad(format!("bad type {i}")))?,
                );
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?
                    .props
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(bad(format!("unrecognized header line: {line}"))),
        }
    }
    let mut pos = end + END.len();
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated body".into()))?;
        pos += n;
        Ok(s)
    };
    let mut mesh = ColoredMesh::default();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut rgb = [None; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(take(ty.size())?);
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = Some(v),
                            "green" => rgb[1] = Some(v),
                            "blue" => rgb[2] = Some(v),
                            _ => {}
                        }
                    }
                    Property::List(name, cty, ity) => {
                        let n = cty.read(take(cty.size())?) as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(ity.read(take(ity.size())?) as u32);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if idx.len() < 3 {
                                return Err(bad("face with fewer than 3 vertices".into()));
                            }
                            for k in 1..idx.len() - 1 {
                                mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(xyz);
                if let [Some(r), Some(g), Some(b)] = rgb {
                    mesh.colors.push([r / 255.0, g / 255.0, b / 255.0]);
                }
            }
        }
    }
    let nv = mesh.vertices.len() as u32;
    if mesh.triangles.iter().flatten().any(|&i| i >= nv) {
        return Err(bad("face index out of range".into()));
    }
    if !mesh.colors.is_empty() && mesh.colors.len() != mesh.vertices.len() {
        mesh.colors.clear();
    }
    Ok(mesh)
}

pub fn read_ply(path: &Path) -> Result<ColoredMesh> {
    decode_ply(&read(path)?, path)
}
