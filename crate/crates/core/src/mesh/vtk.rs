//! Legacy ASCII VTK writer.

use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};

#[derive(Debug, Clone, Copy)]
pub enum VtkField<'a> {
    Scalar(&'a str, &'a ScalarField),
    Vector(&'a str, &'a VectorField),
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

pub fn vtk_string(mesh: &Mesh, fields: &[VtkField<'_>]) -> String {
    let nv = mesh.num_nodes();
    let nt = mesh.num_triangles();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nshapeflow mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} 0", p[0], p[1]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "CELL_DATA {nt}\nSCALARS region int 1\nLOOKUP_TABLE default");
    for r in mesh.tri_region() {
        let _ = writeln!(s, "{r}");
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {nv}");
    }
    for f in fields {
        match *f {
            VtkField::Scalar(name, v) => {
                assert_eq!(v.len(), nv, "field '{name}' length");
                let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", sanitize(name));
                for x in v.values() {
                    let _ = writeln!(s, "{x}");
                }
            }
            VtkField::Vector(name, v) => {
                assert_eq!(v.len(), nv, "field '{name}' length");
                let _ = writeln!(s, "VECTORS {} double", sanitize(name));
                for x in &v.0 {
                    let _ = writeln!(s, "{} {} 0", x[0], x[1]);
                }
            }
        }
    }
    s
}

pub fn write_vtk(path: impl AsRef<Path>, mesh: &Mesh, fields: &[VtkField<'_>]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, vtk_string(mesh, fields)).map_err(|e| Error::io(path, e))
}
