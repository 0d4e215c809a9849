//! Mesh files (ASCII OBJ, binary little-endian PLY) and raw grid dumps.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScalarGrid, TriangleMesh};
use crate::error::{Error, Result};
use crate::gaussian::Aabb;
use crate::ply::{read_ply, Value};
use crate::Vec3;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// An empty mesh produces an empty file.
pub fn write_obj<W: Write>(mut w: W, mesh: &TriangleMesh) -> Result<()> {
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Reads `v` and `f` records; polygons are fan-triangulated and negative
/// (relative) indices are resolved.
pub fn read_obj<R: BufRead>(r: R) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut tokens = line.split_whitespace();
        let bad = |what: &str| fmt_err(format!("OBJ line {}: {what}", lineno + 1));
        match tokens.next() {
            Some("v") => {
                let c: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse().map_err(|_| bad("bad vertex coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let resolved = if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            i - 1
                        };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn write_ply<W: Write>(mut w: W, mesh: &TriangleMesh) -> Result<()> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    w.write_all(header.as_bytes())?;
    for v in &mesh.vertices {
        for c in v.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for i in t {
            w.write_all(&(*i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Accepts ASCII or binary little-endian files with `vertex_indices` (or
/// `vertex_index`) face lists.
pub fn read_ply_mesh<R: BufRead>(r: R) -> Result<TriangleMesh> {
    let data = read_ply(r)?;
    let vertex = data
        .element("vertex")
        .ok_or_else(|| fmt_err("mesh PLY has no vertex element"))?;
    let xyz: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|p| {
            vertex
                .def
                .index_of(p)
                .ok_or_else(|| fmt_err(format!("mesh PLY lacks vertex property '{p}'")))
        })
        .collect::<Result<_>>()?;
    let vertices = vertex
        .rows
        .iter()
        .map(|row| {
            Ok(Vec3::new(
                row[xyz[0]].scalar()?,
                row[xyz[1]].scalar()?,
                row[xyz[2]].scalar()?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut triangles = Vec::new();
    if let Some(face) = data.element("face") {
        let col = face
            .def
            .index_of("vertex_indices")
            .or_else(|| face.def.index_of("vertex_index"))
            .ok_or_else(|| fmt_err("mesh PLY faces lack vertex_indices"))?;
        for row in &face.rows {
            let Value::List(idx) = &row[col] else {
                return Err(fmt_err("face vertex_indices must be a list"));
            };
            if idx.len() < 3 {
                return Err(fmt_err("face needs at least three vertices"));
            }
            let idx: Vec<u32> = idx
                .iter()
                .map(|&i| {
                    if i >= 0.0 && i < vertices.len() as f64 {
                        Ok(i as u32)
                    } else {
                        Err(fmt_err(format!("face index {i} out of range")))
                    }
                })
                .collect::<Result<_>>()?;
            for k in 1..idx.len() - 1 {
                triangles.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(crate::error::domain(format!(
                "mesh path {} must end in .obj or .ply",
                path.display()
            ))),
        }
    }
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let format = MeshFormat::from_path(path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        MeshFormat::Obj => write_obj(&mut w, mesh)?,
        MeshFormat::Ply => write_ply(&mut w, mesh)?,
    }
    w.flush()?;
    Ok(())
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path)?;
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    match format {
        MeshFormat::Obj => read_obj(r),
        MeshFormat::Ply => read_ply_mesh(r),
    }
}

/// Sidecar describing a raw float32 grid dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub resolution: usize,
    pub bounds: Aabb,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
}

/// Writes `values` as little-endian float32 to `raw_path` and the layout
/// description to `raw_path` with a `.json` extension.
pub fn dump_grid(grid: &ScalarGrid, raw_path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(raw_path)?);
    for v in &grid.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = GridSidecar {
        resolution: grid.spec.resolution,
        bounds: grid.spec.bounds,
        dtype: "float32".into(),
        byte_order: "little".into(),
        layout: "x fastest, then y, then z".into(),
    };
    std::fs::write(
        raw_path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{marching_cubes, GridSpec};

    fn mesh() -> TriangleMesh {
        let spec = GridSpec::new(12, Aabb::cube(Vec3::zeros(), 1.0).unwrap()).unwrap();
        let grid = ScalarGrid::from_fn(spec, |x| x.norm() - 0.6).unwrap();
        marching_cubes(&grid, 0.0).unwrap()
    }

    #[test]
    fn obj_roundtrip_is_exact() {
        let m = mesh();
        let mut buf = Vec::new();
        write_obj(&mut buf, &m).unwrap();
        assert_eq!(read_obj(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn obj_reader_handles_polygons_and_relative_indices() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\nf -4 -3 -2\n";
        let m = read_obj(text.as_bytes()).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]);
        assert!(matches!(
            read_obj("v 0 0\n".as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_obj("v 0 0 0\nf 1 2 3\n".as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn ply_roundtrip_keeps_float_precision() {
        let m = mesh();
        let mut buf = Vec::new();
        write_ply(&mut buf, &m).unwrap();
        let back = read_ply_mesh(buf.as_slice()).unwrap();
        assert_eq!(back.triangles, m.triangles);
        for (a, b) in m.vertices.iter().zip(&back.vertices) {
            assert!((a - b).amax() < 1e-6);
        }
    }

    #[test]
    fn ascii_ply_mesh_is_accepted() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\nproperty double y\nproperty double z\n\
            element face 1\nproperty list uchar uint vertex_index\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = read_ply_mesh(text.as_bytes()).unwrap();
        assert_eq!(m.triangles.len(), 2);
        assert!((m.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mesh_writes_an_empty_obj() {
        let mut buf = Vec::new();
        write_obj(&mut buf, &TriangleMesh::default()).unwrap();
        assert!(buf.is_empty());
        assert!(read_obj(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn files_dispatch_on_extension() {
        let dir = tempfile::tempdir().unwrap();
        let m = mesh();
        for name in ["m.obj", "m.PLY"] {
            let p = dir.path().join(name);
            save_mesh(&m, &p).unwrap();
            assert_eq!(load_mesh(&p).unwrap().triangles, m.triangles);
        }
        assert!(save_mesh(&m, &dir.path().join("m.stl")).is_err());
    }

    #[test]
    fn grid_dump_has_a_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(8, Aabb::cube(Vec3::zeros(), 1.0).unwrap()).unwrap();
        let grid = ScalarGrid::from_fn(spec, |x| x.x).unwrap();
        let raw = dir.path().join("grid.f32");
        dump_grid(&grid, &raw).unwrap();
        let bytes = std::fs::read(&raw).unwrap();
        assert_eq!(bytes.len(), 512 * 4);
        assert_eq!(
            f32::from_le_bytes(bytes[4..8].try_into().unwrap()),
            grid.values[1] as f32
        );
        let side: GridSidecar =
            serde_json::from_slice(&std::fs::read(raw.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side.resolution, 8);
    }
}
