//! ASCII OBJ / PLY mesh readers and writers.
//!
//! Vertex coordinates are written with Rust's shortest round-trip
//! float formatting, so write-then-read reproduces coordinates exactly.

use crate::mesh::TriangleMesh;
use crate::scene::Point3;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension()?.to_str()? {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::PlyAscii),
            _ => None,
        }
    }
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let fmt = MeshFormat::from_path(path)
        .ok_or_else(|| Error::Mesh(format!("unsupported mesh extension: {}", path.display())))?;
    let text = match fmt {
        MeshFormat::Obj => obj_string(mesh),
        MeshFormat::PlyAscii => ply_string(mesh),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let fmt = MeshFormat::from_path(path)
        .ok_or_else(|| Error::Mesh(format!("unsupported mesh extension: {}", path.display())))?;
    let text = std::fs::read_to_string(path)?;
    match fmt {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::PlyAscii => parse_ply(&text),
    }
}

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

fn ply_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0").unwrap();
    writeln!(s, "element vertex {}", mesh.vertices.len()).unwrap();
    writeln!(s, "property double x\nproperty double y\nproperty double z").unwrap();
    writeln!(s, "element face {}", mesh.faces.len()).unwrap();
    writeln!(s, "property list uchar int vertex_indices\nend_header").unwrap();
    for v in &mesh.vertices {
        writeln!(s, "{} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    s
}

fn parse_float(tok: &str, line: usize) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::Parse { line, msg: format!("invalid number {tok:?}") })
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for slot in &mut c {
                    let tok = toks
                        .next()
                        .ok_or(Error::Parse { line, msg: "vertex needs 3 coordinates".into() })?;
                    *slot = parse_float(tok, line)?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idxs: Vec<&str> = toks.collect();
                if idxs.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-triangular face with {} vertices", idxs.len()),
                    });
                }
                let mut f = [0usize; 3];
                for (k, tok) in idxs.iter().enumerate() {
                    // "v", "v/vt", "v/vt/vn", "v//vn" all start with the index
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::Parse { line, msg: format!("bad index {tok:?}") })?;
                    if i < 1 {
                        return Err(Error::Parse { line, msg: format!("bad index {i}") });
                    }
                    f[k] = (i - 1) as usize;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    finish(vertices, faces)
}

pub fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate();
    let mut n_vert = None;
    let mut n_face = None;
    let mut body_start = 0;
    for (idx, raw) in lines.by_ref() {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", n] => {
                n_vert = Some(n.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad vertex count {n:?}"),
                })?)
            }
            ["element", "face", n] => {
                n_face = Some(n.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad face count {n:?}"),
                })?)
            }
            ["format", f, ..] if *f != "ascii" => {
                return Err(Error::Parse { line, msg: format!("unsupported PLY format {f}") })
            }
            ["end_header"] => {
                body_start = line;
                break;
            }
            _ => {}
        }
    }
    let (n_vert, n_face) = match (n_vert, n_face) {
        (Some(v), Some(f)) => (v, f),
        _ => return Err(Error::Parse { line: body_start, msg: "missing element counts".into() }),
    };
    let mut vertices = Vec::with_capacity(n_vert);
    let mut faces = Vec::with_capacity(n_face);
    for (idx, raw) in lines {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if vertices.len() < n_vert {
            if toks.len() < 3 {
                return Err(Error::Parse { line, msg: "vertex needs 3 coordinates".into() });
            }
            vertices.push(Point3::new(
                parse_float(toks[0], line)?,
                parse_float(toks[1], line)?,
                parse_float(toks[2], line)?,
            ));
        } else if faces.len() < n_face {
            if toks[0] != "3" || toks.len() < 4 {
                return Err(Error::Parse { line, msg: "non-triangular face".into() });
            }
            let mut f = [0usize; 3];
            for k in 0..3 {
                f[k] = toks[k + 1]
                    .parse()
                    .map_err(|_| Error::Parse { line, msg: format!("bad index {:?}", toks[k + 1]) })?;
            }
            faces.push(f);
        }
    }
    if vertices.len() != n_vert || faces.len() != n_face {
        return Err(Error::Parse { line: 0, msg: "truncated PLY body".into() });
    }
    finish(vertices, faces)
}

fn finish(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<TriangleMesh> {
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            if v >= vertices.len() {
                return Err(Error::Mesh(format!(
                    "face {fi} references out-of-range vertex index {v}"
                )));
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}
