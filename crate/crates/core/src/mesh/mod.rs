//! Marching-cubes extraction of the zero level set and geometric metrics.

pub mod io;
mod table;

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::Aabb;
use crate::sdf::SdfField;
use crate::shapes::Shape;
use crate::spatial::PointIndex;
use crate::{Rng, Vec3};

pub const MIN_RESOLUTION: usize = 8;
/// Triangles at or below this area are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Regular lattice of `resolution` nodes per axis spanning `bounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub bounds: Aabb,
}

impl GridSpec {
    pub fn new(resolution: usize, bounds: Aabb) -> Result<Self> {
        let spec = Self { resolution, bounds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < MIN_RESOLUTION {
            return Err(domain(format!(
                "grid resolution must be at least {MIN_RESOLUTION}, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> Vec3 {
        self.bounds.extent() / (self.resolution - 1) as f64
    }

    /// Largest cell edge; the natural error scale of the extraction.
    pub fn max_cell_size(&self) -> f64 {
        self.cell_size().max()
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let c = self.cell_size();
        self.bounds.min + Vec3::new(i as f64 * c.x, j as f64 * c.y, k as f64 * c.z)
    }

    pub fn num_nodes(&self) -> usize {
        self.resolution.pow(3)
    }

    /// Flat index with x varying fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }
}

/// Field values at every node of a [`GridSpec`], x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.num_nodes() {
            return Err(Error::Shape(format!(
                "grid of resolution {} needs {} values, got {}",
                spec.resolution,
                spec.num_nodes(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("grid value {i} is not finite")));
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        spec.validate()?;
        let n = spec.resolution;
        let mut values = Vec::with_capacity(spec.num_nodes());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    values.push(f(&spec.node(i, j, k)));
                }
            }
        }
        Self::new(spec, values)
    }

    /// Evaluates `field` at every node, splitting z-slabs over up to
    /// `threads` workers. The result does not depend on the thread count.
    pub fn sample<F: SdfField + Sync>(field: &F, spec: GridSpec, threads: usize) -> Result<Self> {
        spec.validate()?;
        let n = spec.resolution;
        let slab = n * n;
        let workers = threads.clamp(1, n);
        let per_worker = n.div_ceil(workers);
        let mut values = vec![0.0; spec.num_nodes()];
        let spec_ref = &spec;
        std::thread::scope(|s| {
            let handles: Vec<_> = values
                .chunks_mut(slab * per_worker)
                .enumerate()
                .map(|(w, chunk)| {
                    s.spawn(move || -> Result<()> {
                        for (offset, v) in chunk.iter_mut().enumerate() {
                            let flat = w * slab * per_worker + offset;
                            let (i, j, k) = (flat % n, (flat / n) % n, flat / slab);
                            *v = field.value(&spec_ref.node(i, j, k))?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles
                .into_iter()
                .try_for_each(|h| h.join().expect("grid worker panicked"))
        })?;
        Self::new(spec, values)
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(domain(format!("triangle {t} indexes past {n} vertices")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(domain(format!("triangle {t} repeats a vertex")));
            }
        }
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(domain(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Unnormalized normal; its length is twice the triangle area.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|t| 0.5 * self.face_normal(t).norm())
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }
}

// Corner offsets and edge endpoints matching the triangle table.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set. Triangles are emitted in cell order and
/// wound so their normals point toward increasing field values; vertices
/// on shared edges are merged.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    if !iso.is_finite() {
        return Err(domain("iso level must be finite"));
    }
    let spec = &grid.spec;
    let n = spec.resolution;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<usize, u32> = HashMap::new();
    let mut triangles = Vec::new();

    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let node = CORNERS.map(|[di, dj, dk]| (i + di, j + dj, k + dk));
                let vals = node.map(|(a, b, c)| grid.at(a, b, c));
                let case = vals
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (c, &v)| acc | (((v < iso) as usize) << c));
                let row = &table::TRI_TABLE[case];
                let mut vertex_on = |e: usize| -> u32 {
                    let [a, b] = EDGES[e];
                    let (pa, pb) = (node[a], node[b]);
                    // Key an edge by its lower node and axis so neighbors share it.
                    let (lo, axis) = if pa < pb {
                        (pa, axis_of(pa, pb))
                    } else {
                        (pb, axis_of(pb, pa))
                    };
                    let key = spec.index(lo.0, lo.1, lo.2) * 3 + axis;
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[a], vals[b]);
                        let t = if vb != va {
                            ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                        } else {
                            0.5
                        };
                        let xa = spec.node(pa.0, pa.1, pa.2);
                        let xb = spec.node(pb.0, pb.1, pb.2);
                        vertices.push(xa + (xb - xa) * t);
                        (vertices.len() - 1) as u32
                    })
                };
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let idx = [tri[0], tri[2], tri[1]].map(|e| vertex_on(e as usize));
                    triangles.push(idx);
                }
            }
        }
    }

    let mut mesh = TriangleMesh {
        vertices,
        triangles,
    };
    mesh.triangles
        .retain(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
    let areas = mesh.triangle_areas();
    let mut keep = areas.iter().map(|&a| a > MIN_TRIANGLE_AREA);
    mesh.triangles.retain(|_| keep.next().unwrap_or(false));
    Ok(compact(mesh))
}

fn axis_of(lo: (usize, usize, usize), hi: (usize, usize, usize)) -> usize {
    if lo.0 != hi.0 {
        0
    } else if lo.1 != hi.1 {
        1
    } else {
        2
    }
}

/// Drops unreferenced vertices, keeping first-use order.
fn compact(mesh: TriangleMesh) -> TriangleMesh {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let triangles = mesh
        .triangles
        .iter()
        .map(|tri| {
            tri.map(|i| {
                let slot = &mut remap[i as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(mesh.vertices[i as usize]);
                }
                *slot
            })
        })
        .collect();
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Area-weighted uniform points on the mesh surface.
pub fn sample_mesh_surface(mesh: &TriangleMesh, count: usize, rng: &mut Rng) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(domain("cannot sample an empty mesh"));
    }
    let mut cdf = mesh.triangle_areas();
    for t in 1..cdf.len() {
        cdf[t] += cdf[t - 1];
    }
    let total = *cdf.last().expect("non-empty");
    if !(total > 0.0) {
        return Err(domain("cannot sample a mesh with zero total area"));
    }
    Ok((0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.corners(t);
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect())
}

pub enum Reference<'a> {
    Points(&'a [Vec3]),
    /// Mesh-to-reference distances use the exact signed distance; the
    /// reverse direction samples the analytic surface.
    Analytic(&'a Shape),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Mean squared distance from mesh samples to the reference.
    pub mesh_to_reference: f64,
    /// Mean squared distance from reference samples to the mesh samples.
    pub reference_to_mesh: f64,
    /// Average of the two directional terms.
    pub symmetric: f64,
}

impl ChamferReport {
    /// Root of the symmetric term, in scene units.
    pub fn root_mean(&self) -> f64 {
        self.symmetric.sqrt()
    }
}

/// Chamfer distance between `samples` area-weighted mesh points and the
/// reference.
pub fn chamfer_distance(
    mesh: &TriangleMesh,
    reference: &Reference<'_>,
    samples: usize,
    rng: &mut Rng,
) -> Result<ChamferReport> {
    if samples == 0 {
        return Err(domain("chamfer distance needs at least one sample"));
    }
    let on_mesh = sample_mesh_surface(mesh, samples, rng)?;
    let (mesh_to_reference, ref_points) = match reference {
        Reference::Points(points) => {
            if points.is_empty() {
                return Err(domain("reference point set is empty"));
            }
            let index = PointIndex::new(points);
            let m2r = on_mesh.iter().map(|p| index.nearest(p).1).sum::<f64>() / samples as f64;
            (m2r, points.to_vec())
        }
        Reference::Analytic(shape) => {
            let m2r = on_mesh.iter().map(|p| shape.sdf(p).powi(2)).sum::<f64>() / samples as f64;
            (m2r, shape.sample_surface(samples, rng))
        }
    };
    let index = PointIndex::new(&on_mesh);
    let reference_to_mesh =
        ref_points.iter().map(|p| index.nearest(p).1).sum::<f64>() / ref_points.len() as f64;
    Ok(ChamferReport {
        mesh_to_reference,
        reference_to_mesh,
        symmetric: 0.5 * (mesh_to_reference + reference_to_mesh),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn cube() -> Aabb {
        Aabb::cube(Vec3::zeros(), 1.0).unwrap()
    }

    fn sphere_mesh(res: usize, r: f64) -> (TriangleMesh, GridSpec) {
        let spec = GridSpec::new(res, cube()).unwrap();
        let grid = ScalarGrid::from_fn(spec.clone(), |x| x.norm() - r).unwrap();
        (marching_cubes(&grid, 0.0).unwrap(), spec)
    }

    #[test]
    fn table_rows_use_exactly_the_crossed_edges() {
        for (case, row) in table::TRI_TABLE.iter().enumerate() {
            let inside = |c: usize| case >> c & 1 == 1;
            let crossed: Vec<bool> = EDGES.iter().map(|&[a, b]| inside(a) != inside(b)).collect();
            let used: Vec<usize> = row
                .iter()
                .take_while(|&&e| e >= 0)
                .map(|&e| e as usize)
                .collect();
            assert_eq!(used.len() % 3, 0, "case {case}");
            for &e in &used {
                assert!(crossed[e], "case {case} uses uncrossed edge {e}");
            }
            for (e, &c) in crossed.iter().enumerate() {
                assert!(
                    !c || used.contains(&e),
                    "case {case} misses crossed edge {e}"
                );
            }
        }
    }

    #[test]
    fn sphere_vertices_lie_near_the_surface() {
        let (mesh, spec) = sphere_mesh(64, 0.5);
        assert!(!mesh.is_empty());
        mesh.validate().unwrap();
        let h = spec.max_cell_size();
        for v in &mesh.vertices {
            assert!((v.norm() - 0.5).abs() < 2.0 * h);
        }
        assert!(mesh.triangle_areas().iter().all(|&a| a > MIN_TRIANGLE_AREA));
        // Closed surface, so the area is close to 4 pi r^2.
        let area = mesh.area();
        assert!(
            (area - std::f64::consts::PI).abs() < 0.02 * std::f64::consts::PI,
            "{area}"
        );
    }

    #[test]
    fn normals_point_toward_increasing_values() {
        let (mesh, _) = sphere_mesh(32, 0.5);
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.corners(t);
            let centroid = (a + b + c) / 3.0;
            assert!(mesh.face_normal(t).dot(&centroid) > 0.0, "triangle {t}");
        }
    }

    #[test]
    fn sphere_mesh_is_closed() {
        let (mesh, _) = sphere_mesh(24, 0.5);
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                // Consistent winding: each directed edge meets its reverse once.
                *edges.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        assert!(edges.values().all(|&s| s == 0));
    }

    #[test]
    fn constant_field_gives_an_empty_mesh() {
        let spec = GridSpec::new(16, cube()).unwrap();
        for c in [1.0, -1.0] {
            let grid = ScalarGrid::from_fn(spec.clone(), |_| c).unwrap();
            let mesh = marching_cubes(&grid, 0.0).unwrap();
            assert!(mesh.is_empty() && mesh.vertices.is_empty());
        }
    }

    #[test]
    fn plane_is_flat_and_has_the_slab_area() {
        // Odd resolution puts z = 0 exactly on a node layer; even puts it mid-cell.
        for res in [33, 64] {
            let spec = GridSpec::new(res, cube()).unwrap();
            let grid = ScalarGrid::from_fn(spec.clone(), |x| x.z).unwrap();
            let mesh = marching_cubes(&grid, 0.0).unwrap();
            assert!(!mesh.is_empty(), "res {res}");
            let h = spec.max_cell_size();
            assert!(mesh.vertices.iter().all(|v| v.z.abs() < h));
            let area = mesh.area();
            assert!((area - 4.0).abs() <= 0.05 * 4.0, "res {res}: area {area}");
        }
    }

    #[test]
    fn error_halves_when_resolution_doubles() {
        let max_err = |res| {
            let (mesh, _) = sphere_mesh(res, 0.5);
            mesh.vertices
                .iter()
                .map(|v| (v.norm() - 0.5).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (max_err(64), max_err(128));
        assert!(fine <= 0.5 * coarse, "64: {coarse}, 128: {fine}");
    }

    #[test]
    fn threaded_sampling_matches_serial() {
        let spec = GridSpec::new(17, cube()).unwrap();
        let shape = Shape::Torus {
            major: 0.5,
            minor: 0.2,
        };
        let serial = ScalarGrid::sample(&shape, spec.clone(), 1).unwrap();
        let threaded = ScalarGrid::sample(&shape, spec.clone(), 5).unwrap();
        let direct = ScalarGrid::from_fn(spec, |x| shape.sdf(x)).unwrap();
        assert_eq!(serial, threaded);
        assert_eq!(serial, direct);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(GridSpec::new(7, cube()).is_err());
        let spec = GridSpec::new(8, cube()).unwrap();
        assert!(matches!(
            ScalarGrid::new(spec.clone(), vec![0.0; 10]),
            Err(Error::Shape(_))
        ));
        let mut v = vec![0.0; 512];
        v[3] = f64::NAN;
        assert!(ScalarGrid::new(spec, v).is_err());
    }

    fn single() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn samples_stay_inside_a_single_triangle() {
        let pts = sample_mesh_surface(&single(), 2000, &mut rng_from_seed(1)).unwrap();
        for p in pts {
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
    }

    #[test]
    fn samples_split_by_area() {
        // Areas 0.5 and 1.5 on disjoint triangles.
        let mesh = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(13.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 20_000;
        let pts = sample_mesh_surface(&mesh, n, &mut rng_from_seed(2)).unwrap();
        let second = pts.iter().filter(|p| p.x >= 5.0).count() as f64;
        let sigma = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((second - 0.75 * n as f64).abs() < 3.0 * sigma, "{second}");
    }

    #[test]
    fn sampling_is_deterministic_and_checks_its_input() {
        let a = sample_mesh_surface(&single(), 50, &mut rng_from_seed(3)).unwrap();
        let b = sample_mesh_surface(&single(), 50, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        let rng = &mut rng_from_seed(0);
        assert!(sample_mesh_surface(&TriangleMesh::default(), 5, rng).is_err());
        let flat = TriangleMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_mesh_surface(&flat, 5, rng).is_err());
        assert!(TriangleMesh::new(vec![Vec3::zeros()], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn chamfer_against_own_samples_is_zero() {
        let (mesh, _) = sphere_mesh(32, 0.5);
        let reference = sample_mesh_surface(&mesh, 3000, &mut rng_from_seed(9)).unwrap();
        let r = chamfer_distance(
            &mesh,
            &Reference::Points(&reference),
            3000,
            &mut rng_from_seed(9),
        )
        .unwrap();
        assert!(r.symmetric < 1e-6, "{r:?}");
        assert!(chamfer_distance(
            &TriangleMesh::default(),
            &Reference::Points(&reference),
            10,
            &mut rng_from_seed(0)
        )
        .is_err());
    }

    #[test]
    fn chamfer_sees_a_constant_offset() {
        let (unit, _) = sphere_mesh(64, 1.0 - 1e-9);
        let half = Shape::Sphere { radius: 0.5 };
        let r = chamfer_distance(
            &unit,
            &Reference::Analytic(&half),
            4000,
            &mut rng_from_seed(4),
        )
        .unwrap();
        assert!((r.mesh_to_reference - 0.25).abs() < 0.01, "{r:?}");
        assert!(r.reference_to_mesh >= 0.25 - 0.01 && r.symmetric >= 0.0);
    }

    #[test]
    fn chamfer_of_a_translated_copy_is_bounded_by_the_shift() {
        let (mesh, _) = sphere_mesh(48, 0.5);
        let mut rng = rng_from_seed(5);
        for d in [0.01, 0.05, 0.2] {
            let reference: Vec<Vec3> = sample_mesh_surface(&mesh, 4000, &mut rng)
                .unwrap()
                .into_iter()
                .map(|p| p + Vec3::new(d, 0.0, 0.0))
                .collect();
            let r =
                chamfer_distance(&mesh, &Reference::Points(&reference), 2000, &mut rng).unwrap();
            // Sample spacing adds a little on top of the exact shift.
            let spacing = std::f64::consts::PI / 4000.0;
            assert!(r.mesh_to_reference <= d * d + spacing, "d {d}: {r:?}");
        }
    }
}
