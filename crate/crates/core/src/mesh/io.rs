use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellKind, Mesh};
use crate::{NormError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    MshJson,
}

impl MeshFormat {
    /// Guesses the format from a file extension (`.off`, `.obj`, `.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            "json" | "mshjson" => Some(MeshFormat::MshJson),
            _ => None,
        }
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NormError::io(path, e))?;
    match format {
        MeshFormat::Off => parse_off(&text),
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::MshJson => read_mshjson(&text),
    }
}

/// Writes in the format named by the extension, MSHJSON when it is unknown.
/// OFF and OBJ hold triangle meshes only.
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match MeshFormat::from_path(path).unwrap_or(MeshFormat::MshJson) {
        MeshFormat::Off => write_off(mesh)?,
        MeshFormat::Obj => write_obj(mesh)?,
        MeshFormat::MshJson => write_mshjson(mesh),
    };
    fs::write(path, text).map_err(|e| NormError::io(path, e))
}

fn require_triangles(mesh: &Mesh, format: &str) -> Result<()> {
    if mesh.kind() != CellKind::Triangle {
        return Err(NormError::UnsupportedCellKind(format!("{format} holds triangle meshes only; use MSHJSON")));
    }
    Ok(())
}

/// Shortest round-trip decimal forms, so a reload is bit-identical.
pub fn write_off(mesh: &Mesh) -> Result<String> {
    require_triangles(mesh, "OFF")?;
    let mut out = format!("OFF\n{} {} 0\n", mesh.n_vertices(), mesh.n_cells());
    for v in mesh.vertices() {
        out.push_str(&format!("{:?} {:?} {:?}\n", v[0], v[1], v[2]));
    }
    for c in mesh.cells().chunks(3) {
        out.push_str(&format!("3 {} {} {}\n", c[0], c[1], c[2]));
    }
    Ok(out)
}

pub fn write_obj(mesh: &Mesh) -> Result<String> {
    require_triangles(mesh, "OBJ")?;
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {:?} {:?} {:?}\n", v[0], v[1], v[2]));
    }
    for c in mesh.cells().chunks(3) {
        out.push_str(&format!("f {} {} {}\n", c[0] + 1, c[1] + 1, c[2] + 1));
    }
    Ok(out)
}

/// `planar` when every z coordinate is exactly zero.
fn infer_dim(vertices: &[[f64; 3]]) -> usize {
    if vertices.iter().all(|v| v[2] == 0.0) {
        2
    } else {
        3
    }
}

fn parse_f64(tok: Option<&str>, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| NormError::Parse(format!("missing {what}")))?;
    tok.parse::<f64>()
        .map_err(|_| NormError::Parse(format!("bad {what}: {tok:?}")))
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| NormError::Parse(format!("missing {what}")))?;
    tok.parse::<usize>()
        .map_err(|_| NormError::Parse(format!("bad {what}: {tok:?}")))
}

fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| NormError::Parse("empty OFF file".into()))?;
    let Some(rest) = header.strip_prefix("OFF") else {
        return Err(NormError::Parse("missing OFF header".into()));
    };
    let counts_line = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| NormError::Parse("missing OFF counts".into()))?
    } else {
        rest.trim()
    };
    let mut t = counts_line.split_whitespace();
    let nv = parse_usize(t.next(), "vertex count")?;
    let nf = parse_usize(t.next(), "face count")?;
    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let line = lines
            .next()
            .ok_or_else(|| NormError::Parse(format!("missing vertex {k}")))?;
        let mut t = line.split_whitespace();
        vertices.push([
            parse_f64(t.next(), "x")?,
            parse_f64(t.next(), "y")?,
            parse_f64(t.next(), "z")?,
        ]);
    }
    let mut cells = Vec::with_capacity(3 * nf);
    for k in 0..nf {
        let line = lines
            .next()
            .ok_or_else(|| NormError::Parse(format!("missing face {k}")))?;
        let mut t = line.split_whitespace();
        let arity = parse_usize(t.next(), "face arity")?;
        if arity != 3 {
            return Err(NormError::Parse(format!(
                "face {k} has {arity} vertices; only triangles are supported"
            )));
        }
        for _ in 0..3 {
            cells.push(parse_usize(t.next(), "face index")?);
        }
    }
    let dim = infer_dim(&vertices);
    Mesh::new(dim, CellKind::Triangle, vertices, cells)
}

fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<[i64; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => vertices.push([
                parse_f64(t.next(), "x")?,
                parse_f64(t.next(), "y")?,
                parse_f64(t.next(), "z")?,
            ]),
            Some("f") => {
                let idx: Vec<i64> = t
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        first.parse::<i64>().map_err(|_| {
                            NormError::Parse(format!("line {}: bad face index {tok:?}", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(NormError::Parse(format!(
                        "line {}: face has {} vertices; only triangles are supported",
                        lineno + 1,
                        idx.len()
                    )));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut cells = Vec::with_capacity(faces.len() * 3);
    for f in faces {
        for i in f {
            // 1-based, negative indices count back from the last vertex
            let abs = if i > 0 { i - 1 } else if i < 0 { n + i } else { -1 };
            if abs < 0 {
                return Err(NormError::Parse(format!("invalid OBJ index {i}")));
            }
            cells.push(abs as usize);
        }
    }
    let dim = infer_dim(&vertices);
    Mesh::new(dim, CellKind::Triangle, vertices, cells)
}

#[derive(Serialize, Deserialize)]
struct MshJson {
    dim: usize,
    cell_kind: String,
    vertices: Vec<Vec<f64>>,
    cells: Vec<Vec<usize>>,
}

pub fn read_mshjson(text: &str) -> Result<Mesh> {
    let raw: MshJson = serde_json::from_str(text).map_err(|e| NormError::Parse(e.to_string()))?;
    let kind = match raw.cell_kind.as_str() {
        "tri" => CellKind::Triangle,
        "tet" => CellKind::Tetrahedron,
        other => return Err(NormError::Parse(format!("unknown cell_kind {other:?}"))),
    };
    let mut vertices = Vec::with_capacity(raw.vertices.len());
    for (k, v) in raw.vertices.iter().enumerate() {
        match v.len() {
            2 => vertices.push([v[0], v[1], 0.0]),
            3 => vertices.push([v[0], v[1], v[2]]),
            l => return Err(NormError::Parse(format!("vertex {k} has {l} coordinates"))),
        }
    }
    let npc = kind.nodes_per_cell();
    let mut cells = Vec::with_capacity(raw.cells.len() * npc);
    for (k, c) in raw.cells.iter().enumerate() {
        if c.len() != npc {
            return Err(NormError::Parse(format!("cell {k} has {} indices, expected {npc}", c.len())));
        }
        cells.extend_from_slice(c);
    }
    Mesh::new(raw.dim, kind, vertices, cells)
}

pub fn write_mshjson(mesh: &Mesh) -> String {
    let raw = MshJson {
        dim: mesh.dim(),
        cell_kind: match mesh.kind() {
            CellKind::Triangle => "tri".into(),
            CellKind::Tetrahedron => "tet".into(),
        },
        vertices: mesh.vertices().iter().map(|v| v.to_vec()).collect(),
        cells: (0..mesh.n_cells()).map(|c| mesh.cell(c).to_vec()).collect(),
    };
    serde_json::to_string(&raw).expect("mesh serializes")
}
