//! OBJ and ASCII PLY reading, OBJ writing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Load an OBJ or ASCII PLY mesh, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ply") => parse_ply(&text, path),
        Some("obj") => parse_obj(&text, path),
        _ if text.starts_with("ply") => parse_ply(&text, path),
        _ => parse_obj(&text, path),
    }
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing coordinate"))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad number `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite coordinate `{tok}`")));
    }
    Ok(v)
}

/// Fan-triangulate a polygon.
fn push_polygon(faces: &mut Vec<[usize; 3]>, poly: &[usize]) {
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

/// Parse OBJ text: `v` and `f` records, 1-based (or negative relative) indices.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // faces are resolved against the vertex count at the point they appear
    let mut pending: Vec<(usize, Vec<i64>)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, line_no)?;
                let y = parse_f64(toks.next(), path, line_no)?;
                let z = parse_f64(toks.next(), path, line_no)?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in toks {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, line_no, format!("bad face index `{tok}`")))?;
                    let resolved = if i > 0 {
                        i
                    } else if i < 0 {
                        vertices.len() as i64 + i + 1
                    } else {
                        return Err(parse_err(path, line_no, "face index 0 (OBJ indices are 1-based)"));
                    };
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, line_no, "face needs at least 3 vertices"));
                }
                pending.push((line_no, idx));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    for (line_no, idx) in pending {
        let mut poly = Vec::with_capacity(idx.len());
        for i in idx {
            if i < 1 || i > n {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("face index {i} out of range (1..={n})"),
                ));
            }
            poly.push((i - 1) as usize);
        }
        push_polygon(&mut faces, &poly);
    }
    TriMesh::new(vertices, faces)
}

/// Parse an ASCII PLY with `vertex` (x, y, z properties) and `face` (index list) elements.
pub fn parse_ply(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut header_done = false;
    for (no, raw) in lines.by_ref() {
        let line_no = no + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(path, line_no, format!("unsupported PLY format `{fmt}`")));
                }
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", _, _, name] | ["property", _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before element"))?;
                el.props.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(parse_err(path, 0, "missing end_header"));
    }
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for el in &elements {
        for _ in 0..el.count {
            let (no, raw) = body
                .next()
                .ok_or_else(|| parse_err(path, 0, format!("truncated `{}` element", el.name)))?;
            let line_no = no + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let get = |name: &str| -> Result<f64> {
                        let pos = el
                            .props
                            .iter()
                            .position(|p| p == name)
                            .ok_or_else(|| parse_err(path, line_no, format!("vertex has no `{name}`")))?;
                        parse_f64(toks.get(pos).copied(), path, line_no)
                    };
                    vertices.push(Vec3::new(get("x")?, get("y")?, get("z")?));
                }
                "face" => {
                    let count: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, line_no, "bad face list"))?;
                    if count < 3 || toks.len() < count + 1 {
                        return Err(parse_err(path, line_no, "bad face list"));
                    }
                    let mut poly = Vec::with_capacity(count);
                    for t in &toks[1..=count] {
                        let i: usize = t
                            .parse()
                            .map_err(|_| parse_err(path, line_no, format!("bad face index `{t}`")))?;
                        poly.push(i);
                    }
                    push_polygon(&mut faces, &poly);
                }
                _ => {}
            }
        }
    }
    let n = vertices.len();
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
        return Err(parse_err(path, 0, format!("face {f:?} out of range ({n} vertices)")));
    }
    TriMesh::new(vertices, faces)
}

/// Serialize a mesh as OBJ text. Coordinates use the shortest exact decimal form.
pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices().len() * 40 + mesh.faces().len() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_obj(mesh)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn p() -> &'static Path {
        Path::new("test.obj")
    }

    #[test]
    fn single_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", p()).unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn slash_tokens_quads_and_negative_indices() {
        let m = parse_obj(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\nf -4 -3 -2\n",
            p(),
        )
        .unwrap();
        assert_eq!(m.faces().len(), 3);
        assert_eq!(m.faces()[2], [0, 1, 2]);
    }

    #[test]
    fn bad_indices_are_parse_errors() {
        let zero = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", p());
        assert!(matches!(zero, Err(Error::Parse { line: 4, .. })));
        let big = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n", p());
        assert!(matches!(big, Err(Error::Parse { .. })));
        let junk = parse_obj("v 0 zero 0\n", p());
        assert!(matches!(junk, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn degenerate_face_is_reported() {
        let r = parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", p());
        assert!(matches!(r, Err(Error::DegenerateFace { index: 0, .. })));
    }

    #[test]
    fn ply_ascii() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n\
                    property float z\nelement face 1\nproperty list uchar int vertex_indices\n\
                    end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = parse_ply(text, Path::new("q.ply")).unwrap();
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.faces().len(), 2);
        let binary = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(parse_ply(binary, Path::new("q.ply")).is_err());
    }

    #[test]
    fn obj_text_roundtrip_is_exact() {
        let s = shapes::icosphere(1.3, 2);
        let back = parse_obj(&write_obj(&s), p()).unwrap();
        assert_eq!(back, s);
    }
}
