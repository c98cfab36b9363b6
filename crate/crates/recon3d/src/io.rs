//! OBJ (text) and binary little-endian PLY mesh files.
//!
//! OBJ vertices carry optional `r g b` colors in `[0, 1]` after the position
//! and are written in shortest round-trip form. PLY stores positions as
//! `double` and colors as `uchar`, so positions and indices round-trip
//! exactly and colors to within 1/255.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mesh::TriMesh;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    Obj,
    PlyBinary,
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" | "ply-binary" => Ok(MeshFormat::PlyBinary),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for MeshFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeshFormat::Obj => "obj",
            MeshFormat::PlyBinary => "ply-binary",
        })
    }
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::PlyBinary => "ply",
        }
    }

    /// Format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .parse()
    }
}

pub fn mesh_to_bytes(m: &TriMesh, format: MeshFormat) -> Result<Vec<u8>> {
    m.validate()?;
    Ok(match format {
        MeshFormat::Obj => obj_bytes(m),
        MeshFormat::PlyBinary => ply_bytes(m),
    })
}

pub fn mesh_from_bytes(bytes: &[u8], format: MeshFormat) -> Result<TriMesh> {
    let m = match format {
        MeshFormat::Obj => parse_obj(bytes)?,
        MeshFormat::PlyBinary => parse_ply(bytes)?,
    };
    m.validate()?;
    Ok(m)
}

pub fn export_mesh(m: &TriMesh, format: MeshFormat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, mesh_to_bytes(m, format)?)?;
    Ok(())
}

pub fn import_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriMesh> {
    mesh_from_bytes(&fs::read(path)?, format)
}

fn obj_bytes(m: &TriMesh) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, v) in m.vertices.iter().enumerate() {
        match &m.colors {
            Some(c) => {
                let c = c[i];
                writeln!(out, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2])
            }
            None => writeln!(out, "v {} {} {}", v[0], v[1], v[2]),
        }
        .expect("write to vec");
    }
    for t in &m.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to vec");
    }
    out
}

fn obj_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        format: "obj",
        msg: format!("line {line}: {}", msg.into()),
    }
}

fn parse_obj(bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| obj_err(0, e.to_string()))?;
    let mut m = TriMesh::default();
    let mut colors = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let vals: Vec<f64> = parts
                    .map(|p| p.parse::<f64>().map_err(|e| obj_err(n + 1, e.to_string())))
                    .collect::<Result<_>>()?;
                match vals.len() {
                    3 => {}
                    6 => colors.push([vals[3], vals[4], vals[5]]),
                    k => return Err(obj_err(n + 1, format!("vertex with {k} values"))),
                }
                m.vertices.push([vals[0], vals[1], vals[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|p| {
                        let head = p.split('/').next().unwrap_or("");
                        match head.parse::<u32>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(obj_err(n + 1, format!("bad face index `{p}`"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(obj_err(n + 1, "only triangles are supported"));
                }
                m.triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    if !colors.is_empty() {
        if colors.len() != m.vertices.len() {
            return Err(obj_err(0, "colors given for only some vertices"));
        }
        m.colors = Some(colors);
    }
    Ok(m)
}

fn ply_bytes(m: &TriMesh) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        m.vertices.len()
    );
    if m.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        m.triangles.len()
    ));
    out.extend_from_slice(header.as_bytes());
    for (i, v) in m.vertices.iter().enumerate() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(c) = &m.colors {
            out.extend(c[i].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    for t in &m.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

fn ply_err(msg: impl Into<String>) -> Error {
    Error::Parse {
        format: "ply",
        msg: msg.into(),
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| ply_err("unexpected end of data"))?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }
}

fn parse_ply(bytes: &[u8]) -> Result<TriMesh> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| ply_err("missing end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| ply_err(e.to_string()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err(ply_err("not a binary little-endian PLY file"));
    }
    let (mut n_vert, mut n_face, mut vert_props) = (None, None, Vec::new());
    let mut in_vertex = false;
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => {
                n_vert = Some(n.parse::<usize>().map_err(|e| ply_err(e.to_string()))?);
                in_vertex = true;
            }
            ["element", "face", n] => {
                n_face = Some(n.parse::<usize>().map_err(|e| ply_err(e.to_string()))?);
                in_vertex = false;
            }
            ["property", "list", "uchar", "int", "vertex_indices"] if !in_vertex => {}
            ["property", ty, name] if in_vertex => vert_props.push((ty.to_string(), name.to_string())),
            ["end_header"] | ["comment", ..] => {}
            _ => return Err(ply_err(format!("unsupported header line `{line}`"))),
        }
    }
    let xyz = [("double", "x"), ("double", "y"), ("double", "z")];
    let rgb = [("uchar", "red"), ("uchar", "green"), ("uchar", "blue")];
    let props: Vec<(&str, &str)> = vert_props.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let has_color = if props == xyz {
        false
    } else if props.len() == 6 && props[..3] == xyz && props[3..] == rgb {
        true
    } else {
        return Err(ply_err("unsupported vertex properties"));
    };
    let (n_vert, n_face) = (
        n_vert.ok_or_else(|| ply_err("missing vertex element"))?,
        n_face.ok_or_else(|| ply_err("missing face element"))?,
    );
    let mut cur = Cursor { data: bytes, pos: end };
    let mut m = TriMesh::default();
    let mut colors = Vec::new();
    for _ in 0..n_vert {
        let mut v = [0.0; 3];
        for x in &mut v {
            *x = f64::from_le_bytes(cur.take::<8>()?);
        }
        m.vertices.push(v);
        if has_color {
            colors.push(cur.take::<3>()?.map(|b| b as f64 / 255.0));
        }
    }
    for _ in 0..n_face {
        if cur.take::<1>()?[0] != 3 {
            return Err(ply_err("only triangles are supported"));
        }
        let mut t = [0u32; 3];
        for i in &mut t {
            let v = i32::from_le_bytes(cur.take::<4>()?);
            *i = u32::try_from(v).map_err(|_| ply_err("negative vertex index"))?;
        }
        m.triangles.push(t);
    }
    if cur.pos != bytes.len() {
        return Err(ply_err("trailing bytes after face data"));
    }
    if has_color {
        m.colors = Some(colors);
    }
    Ok(m)
}
