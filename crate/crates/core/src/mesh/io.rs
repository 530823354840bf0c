//! ASCII OBJ and PLY readers. Polygons are fan-triangulated; degenerate
//! triangles are dropped and reported.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::TriangleMesh;

#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    /// One entry per dropped face.
    pub warnings: Vec<String>,
}

/// Loads an ASCII `.obj` or `.ply` file. Every dropped face is logged at
/// `warn` level and returned in [`LoadedMesh::warnings`].
pub fn load_mesh(path: impl AsRef<Path>) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let is_ply = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => true,
        Some(e) if e.eq_ignore_ascii_case("obj") => false,
        _ => bytes.starts_with(b"ply"),
    };
    let loaded = if is_ply {
        parse_ply(&bytes, path)?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("not UTF-8 text: {e}"),
        })?;
        parse_obj(text, path)?
    };
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn finish(
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    path: &Path,
    last_line: usize,
) -> Result<LoadedMesh> {
    if faces.is_empty() {
        return Err(parse_err(path, last_line, "no faces found"));
    }
    let (mesh, warnings) = TriangleMesh::new(vertices, faces)
        .map_err(|e| parse_err(path, last_line, e.to_string()))?;
    if mesh.faces().is_empty() {
        return Err(parse_err(path, last_line, "every face is degenerate"));
    }
    Ok(LoadedMesh { mesh, warnings })
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn parse_coords<'a>(
    mut tokens: impl Iterator<Item = &'a str>,
    path: &Path,
    line: usize,
) -> Result<Vec3> {
    let mut c = [0.0; 3];
    for slot in &mut c {
        let tok = tokens
            .next()
            .ok_or_else(|| parse_err(path, line, "expected 3 coordinates"))?;
        *slot = tok
            .parse::<f64>()
            .map_err(|_| parse_err(path, line, format!("bad coordinate {tok:?}")))?;
        if !slot.is_finite() {
            return Err(parse_err(path, line, format!("non-finite coordinate {tok:?}")));
        }
    }
    Ok(Vec3::new(c[0], c[1], c[2]))
}

pub fn parse_obj(text: &str, path: &Path) -> Result<LoadedMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut line_no = 0;
    for (i, raw) in text.lines().enumerate() {
        line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => vertices.push(parse_coords(tokens, path, line_no)?),
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let idx_tok = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok
                        .parse()
                        .map_err(|_| parse_err(path, line_no, format!("bad face index {tok:?}")))?;
                    let resolved = match idx {
                        0 => None,
                        i if i > 0 => Some(i as usize - 1),
                        i => (vertices.len() as i64 + i).try_into().ok(),
                    };
                    match resolved {
                        Some(r) if r < vertices.len() => poly.push(r),
                        _ => {
                            return Err(parse_err(
                                path,
                                line_no,
                                format!("face index {idx} out of range"),
                            ))
                        }
                    }
                }
                if poly.len() < 3 {
                    return Err(parse_err(path, line_no, "face needs at least 3 vertices"));
                }
                fan(&poly, &mut faces);
            }
            // vt, vn, g, o, s, usemtl, mtllib, ... carry nothing we use.
            _ => {}
        }
    }
    finish(vertices, faces, path, line_no)
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    list_props: usize,
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<LoadedMesh> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(parse_err(path, n, "missing 'ply' magic")),
        None => return Err(parse_err(path, 0, "empty file")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    let mut last = 1;
    for (n, line) in lines.by_ref() {
        last = n;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => match tok.next() {
                Some("ascii") => {}
                Some(other) => {
                    return Err(parse_err(
                        path,
                        n,
                        format!("unsupported PLY format {other:?}; only ascii is read"),
                    ))
                }
                None => return Err(parse_err(path, n, "format line without a format")),
            },
            Some("element") => {
                let name = tok.next().unwrap_or("").to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, n, "bad element count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    props: Vec::new(),
                    list_props: 0,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, n, "property before any element"))?;
                let parts: Vec<&str> = tok.collect();
                if parts.first() == Some(&"list") {
                    el.list_props += 1;
                }
                el.props.push(parts.last().unwrap_or(&"").to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(parse_err(path, last, "missing end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let axis = |name: &str| {
                    el.props
                        .iter()
                        .position(|p| p == name)
                        .ok_or_else(|| parse_err(path, last, format!("vertex has no {name}")))
                };
                let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
                if el.list_props > 0 {
                    return Err(parse_err(path, last, "list properties on vertices"));
                }
                for _ in 0..el.count {
                    let (n, line) = lines
                        .next()
                        .ok_or_else(|| parse_err(path, last, "truncated vertex list"))?;
                    last = n;
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err(path, n, "bad vertex value"))?;
                    if vals.len() < el.props.len() {
                        return Err(parse_err(path, n, "too few vertex values"));
                    }
                    let v = Vec3::new(vals[ix], vals[iy], vals[iz]);
                    if !v.iter().all(|c| c.is_finite()) {
                        return Err(parse_err(path, n, "non-finite vertex"));
                    }
                    vertices.push(v);
                }
            }
            "face" => {
                for _ in 0..el.count {
                    let (n, line) = lines
                        .next()
                        .ok_or_else(|| parse_err(path, last, "truncated face list"))?;
                    last = n;
                    let vals: Vec<usize> = line
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err(path, n, "bad face index"))?;
                    let k = *vals
                        .first()
                        .ok_or_else(|| parse_err(path, n, "empty face line"))?;
                    if k < 3 || vals.len() < k + 1 {
                        return Err(parse_err(path, n, "face needs at least 3 indices"));
                    }
                    let poly = &vals[1..=k];
                    if let Some(bad) = poly.iter().find(|&&i| i >= vertices.len()) {
                        return Err(parse_err(path, n, format!("face index {bad} out of range")));
                    }
                    fan(poly, &mut faces);
                }
            }
            _ => {
                for _ in 0..el.count {
                    let (n, _) = lines
                        .next()
                        .ok_or_else(|| parse_err(path, last, "truncated element data"))?;
                    last = n;
                }
            }
        }
    }
    finish(vertices, faces, path, last)
}

/// Serializes `mesh` as OBJ text with full-precision coordinates.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}
