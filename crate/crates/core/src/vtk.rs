//! ASCII legacy VTK snapshots of nodal DG fields.
//!
//! Every DG node is a point; each element is a cell over its own vertex
//! nodes, so discontinuities between elements survive in the output.

use std::io::{self, Write};

use crate::dgcore::Discretization;

/// A named nodal field, scalar or 3-vector.
pub enum Field<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [[f64; 3]]),
}

/// Local node of element `k` closest to each of its mesh vertices.
fn corner_nodes(disc: &Discretization, k: usize) -> Vec<usize> {
    let np = disc.np();
    disc.mesh
        .element(k)
        .iter()
        .map(|&v| {
            let x = disc.mesh.vertex(v);
            (0..np)
                .min_by(|&a, &b| {
                    let da = dist2(disc.ops.coords[k * np + a], x);
                    let db = dist2(disc.ops.coords[k * np + b], x);
                    da.total_cmp(&db)
                })
                .unwrap()
                + k * np
        })
        .collect()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn write_vtk(w: &mut dyn Write, disc: &Discretization, title: &str, fields: &[Field]) -> io::Result<()> {
    let nn = disc.n_nodes();
    for f in fields {
        let len = match f {
            Field::Scalar(_, v) => v.len(),
            Field::Vector(_, v) => v.len(),
        };
        if len != nn {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("field has {len} values for {nn} nodes")));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nn} double")?;
    for x in &disc.ops.coords {
        writeln!(w, "{:e} {:e} 0", x[0], x[1])?;
    }
    let ne = disc.n_elements();
    let nv = disc.dim() + 1;
    writeln!(w, "CELLS {ne} {}", ne * (nv + 1))?;
    for k in 0..ne {
        let c = corner_nodes(disc, k);
        write!(w, "{nv}")?;
        for n in c {
            write!(w, " {n}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    let kind = if disc.dim() == 1 { 3 } else { 5 };
    for _ in 0..ne {
        writeln!(w, "{kind}")?;
    }
    writeln!(w, "CELL_DATA {ne}")?;
    writeln!(w, "SCALARS region int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for r in disc.mesh.regions() {
        writeln!(w, "{}", r.id())?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {nn}")?;
    }
    for f in fields {
        match f {
            Field::Scalar(name, v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in v.iter() {
                    writeln!(w, "{x:e}")?;
                }
            }
            Field::Vector(name, v) => {
                writeln!(w, "VECTORS {name} double")?;
                for x in v.iter() {
                    writeln!(w, "{:e} {:e} {:e}", x[0], x[1], x[2])?;
                }
            }
        }
    }
    Ok(())
}
