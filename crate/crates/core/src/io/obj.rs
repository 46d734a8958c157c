//! ASCII OBJ mesh writer (v/f records only).

use super::write_atomic;
use crate::render::TriangleMesh;
use crate::Result;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut text = String::with_capacity(mesh.vertices.len() * 32 + mesh.triangles.len() * 16);
    for v in &mesh.vertices {
        writeln!(text, "v {} {} {}", v[0], v[1], v[2]).expect("string write");
    }
    for t in &mesh.triangles {
        // OBJ indices are 1-based.
        writeln!(text, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    write_atomic(path, text.as_bytes())
}
