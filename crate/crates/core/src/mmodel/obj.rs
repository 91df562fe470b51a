use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix3xX;

use crate::error::Result;

/// Writes `v`/`f` records. Faces are emitted 1-based.
pub fn write_obj(mut w: impl Write, vertices: &Matrix3xX<f64>, triangles: &[[u32; 3]]) -> Result<()> {
    for v in vertices.column_iter() {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for t in triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn write_obj_file(path: &Path, vertices: &Matrix3xX<f64>, triangles: &[[u32; 3]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obj(&mut w, vertices, triangles)?;
    w.flush()?;
    Ok(())
}
