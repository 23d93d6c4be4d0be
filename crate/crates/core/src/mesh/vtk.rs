use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::field::Field;
use crate::{NormError, Result};

/// Legacy ASCII VTK unstructured grid with one scalar array per channel of
/// each named field.
pub fn write_vtk(mesh: &Mesh, fields: &[(&str, &Field)]) -> Result<String> {
    let n = mesh.n_vertices();
    for (name, f) in fields {
        if f.n_nodes() != n {
            return Err(NormError::DimensionMismatch(format!(
                "field {name} has {} nodes, mesh has {n}",
                f.n_nodes()
            )));
        }
    }
    let mut out = String::new();
    let npc = mesh.kind().nodes_per_cell();
    let nc = mesh.n_cells();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\nnorm field export\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {n} double");
    for v in mesh.vertices() {
        let _ = writeln!(out, "{:e} {:e} {:e}", v[0], v[1], v[2]);
    }
    let _ = writeln!(out, "CELLS {nc} {}", nc * (npc + 1));
    for c in 0..nc {
        let ids: Vec<String> = mesh.cell(c).iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{npc} {}", ids.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {nc}");
    let ty = mesh.kind().vtk_type();
    for _ in 0..nc {
        let _ = writeln!(out, "{ty}");
    }
    if !fields.is_empty() {
        let _ = writeln!(out, "POINT_DATA {n}");
    }
    for (name, f) in fields {
        for c in 0..f.channels() {
            let label = if f.channels() == 1 { name.to_string() } else { format!("{name}_{c}") };
            let _ = writeln!(out, "SCALARS {label} double 1\nLOOKUP_TABLE default");
            for i in 0..n {
                let _ = writeln!(out, "{:e}", f.get(i, c));
            }
        }
    }
    Ok(out)
}

pub fn write_vtk_file(mesh: &Mesh, fields: &[(&str, &Field)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = write_vtk(mesh, fields)?;
    std::fs::write(path, text).map_err(|e| NormError::io(path, e))
}
