//! CSV, legacy VTK and JSON artifacts. Floating point values are written
//! with 17 significant digits so that re-parsing reproduces them exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::{compute_gradients, FEField};
use crate::measures::SigmaMeasure;
use crate::mesh::Mesh;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Exponent as used in file names: `p10`, `p2.5`.
pub fn exponent_tag(p: f64) -> String {
    format!("p{p}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_vertices_csv(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "id,x,y,is_boundary")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", fmt_f64(v[0]), fmt_f64(v[1]), u8::from(mesh.is_boundary[i]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_triangles_csv(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "id,v0,v1,v2")?;
    for (k, t) in mesh.triangles.iter().enumerate() {
        writeln!(w, "{k},{},{},{}", t[0], t[1], t[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_solution_csv(field: &FEField, path: &Path) -> Result<()> {
    let n = field.target_dim;
    let mut w = create(path)?;
    let header: Vec<String> = (1..=n).map(|a| format!("u_{a}")).collect();
    writeln!(w, "vertex_id,{}", header.join(","))?;
    for v in 0..field.mesh.num_vertices() {
        let vals: Vec<String> = (0..n).map(|a| fmt_f64(field.value(v, a))).collect();
        writeln!(w, "{v},{}", vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per element of the measure's region. `log_density` is the log
/// of the density of `sigma` against Lebesgue measure and `weight` is the
/// element mass.
pub fn write_sigma_csv(mesh: &Mesh, sigma: &SigmaMeasure, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "element_id,barycenter_x,barycenter_y,grad_norm,log_density,weight")?;
    for (i, &k) in sigma.region.elements.iter().enumerate() {
        let b = mesh.barycenter(k);
        writeln!(
            w,
            "{k},{},{},{},{},{}",
            fmt_f64(b[0]),
            fmt_f64(b[1]),
            fmt_f64(sigma.grad_norms[i]),
            fmt_f64(finite_or_floor(sigma.log_density[i] - sigma.log_total)),
            fmt_f64(sigma.masses[i]),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn finite_or_floor(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else if x > 0.0 {
        f64::MAX
    } else {
        f64::MIN
    }
}

/// ASCII legacy VTK unstructured grid with the solution as point vectors
/// and `grad_norm`, `sigma_weight`, `log_density` as cell scalars. Cells
/// outside the measure's region carry zero weight and log-density.
pub fn export_vtk(field: &FEField, sigma: Option<&SigmaMeasure>, title: &str, path: &Path) -> Result<()> {
    let mesh = &field.mesh;
    let (nv, ne) = (mesh.num_vertices(), mesh.num_elements());
    let mut w = create(path)?;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} 0", fmt_f64(v[0]), fmt_f64(v[1]))?;
    }
    writeln!(w, "CELLS {ne} {}", 4 * ne)?;
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    writeln!(w, "VECTORS u double")?;
    for v in 0..nv {
        let u: Vec<f64> = (0..3).map(|a| if a < field.target_dim { field.value(v, a) } else { 0.0 }).collect();
        writeln!(w, "{} {} {}", fmt_f64(u[0]), fmt_f64(u[1]), fmt_f64(u[2]))?;
    }
    let grads = compute_gradients(field);
    let mut weight = vec![0.0; ne];
    let mut log_density = vec![0.0; ne];
    if let Some(s) = sigma {
        for (i, &k) in s.region.elements.iter().enumerate() {
            weight[k] = s.masses[i];
            log_density[k] = finite_or_floor(s.log_density[i] - s.log_total);
        }
    }
    writeln!(w, "CELL_DATA {ne}")?;
    for (name, data) in [("grad_norm", &grads.norms), ("sigma_weight", &weight), ("log_density", &log_density)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for x in data.iter() {
            writeln!(w, "{}", fmt_f64(*x))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Contents of a legacy VTK file written by [`export_vtk`].
#[derive(Debug, Clone, PartialEq)]
pub struct VtkGrid {
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_scalars: Vec<(String, Vec<f64>)>,
}

pub fn read_vtk(path: &Path) -> Result<VtkGrid> {
    let bad = |m: &str| Error::Config(format!("{}: {m}", path.display()));
    let mut tokens: Vec<String> = Vec::new();
    for line in BufReader::new(File::open(path)?).lines().skip(2) {
        tokens.extend(line?.split_whitespace().map(str::to_string));
    }
    let mut it = tokens.into_iter();
    let mut next = || it.next().ok_or_else(|| bad("unexpected end of file"));
    let num = |s: String| s.parse::<f64>().map_err(|_| bad("bad number"));
    let int = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
    let mut grid = VtkGrid { points: Vec::new(), cells: Vec::new(), cell_scalars: Vec::new() };
    let mut cell_count = 0;
    let mut in_cell_data = false;
    loop {
        let key = match next() {
            Ok(k) => k,
            Err(_) => break,
        };
        match key.as_str() {
            "ASCII" | "DATASET" | "UNSTRUCTURED_GRID" => {}
            "POINTS" => {
                let n = int(next()?)?;
                next()?;
                for _ in 0..n {
                    grid.points.push([num(next()?)?, num(next()?)?, num(next()?)?]);
                }
            }
            "CELLS" => {
                cell_count = int(next()?)?;
                next()?;
                for _ in 0..cell_count {
                    let m = int(next()?)?;
                    let cell = (0..m).map(|_| next().and_then(int)).collect::<Result<Vec<_>>>()?;
                    grid.cells.push(cell);
                }
            }
            "CELL_TYPES" => {
                for _ in 0..int(next()?)? {
                    next()?;
                }
            }
            "POINT_DATA" => {
                let n = int(next()?)?;
                in_cell_data = false;
                if next()? != "VECTORS" {
                    return Err(bad("expected point vectors"));
                }
                next()?;
                next()?;
                for _ in 0..3 * n {
                    next()?;
                }
            }
            "CELL_DATA" => {
                next()?;
                in_cell_data = true;
            }
            "SCALARS" if in_cell_data => {
                let name = next()?;
                next()?;
                next()?;
                if next()? != "LOOKUP_TABLE" {
                    return Err(bad("expected LOOKUP_TABLE"));
                }
                next()?;
                let data = (0..cell_count).map(|_| next().and_then(num)).collect::<Result<Vec<_>>>()?;
                grid.cell_scalars.push((name, data));
            }
            other => return Err(bad(&format!("unexpected token `{other}`"))),
        }
    }
    Ok(grid)
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
