//! Exact nearest-neighbor queries over a fixed point set.

use crate::Vec3;

/// Below this many points queries use a linear scan.
pub const BRUTE_FORCE_LIMIT: usize = 2000;
const TARGET_PER_CELL: f64 = 2.0;
const MAX_CELLS_PER_AXIS: usize = 256;

/// Nearest-neighbor index. Grid and brute-force paths return identical
/// answers; among equidistant points the lowest index wins.
pub struct PointIndex<'a> {
    points: &'a [Vec3],
    grid: Option<Grid>,
}

struct Grid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl Grid {
    fn build(points: &[Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = (hi - lo).map(|e| e.max(1e-9));
        let volume = ext.x * ext.y * ext.z;
        let mut sorted = [ext.x, ext.y, ext.z];
        sorted.sort_by(|a, b| b.total_cmp(a));
        let per_point = TARGET_PER_CELL / points.len() as f64;
        // Points on a surface fill an area, not a volume.
        let cell = (volume * per_point)
            .cbrt()
            .max((sorted[0] * sorted[1] * per_point).sqrt())
            .max(sorted[0] / MAX_CELLS_PER_AXIS as f64);
        let dims =
            [0, 1, 2].map(|i| ((ext[i] / cell).floor() as usize + 1).min(MAX_CELLS_PER_AXIS));
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; n_cells + 1];
        let mut ids = Vec::with_capacity(points.len());
        for p in points {
            let id = Self::cell_of(&lo, cell, &dims, p);
            counts[id + 1] += 1;
            ids.push(id);
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; points.len()];
        for (i, id) in ids.into_iter().enumerate() {
            items[fill[id] as usize] = i as u32;
            fill[id] += 1;
        }
        Self {
            origin: lo,
            cell,
            dims,
            starts,
            items,
        }
    }

    fn coords(origin: &Vec3, cell: f64, dims: &[usize; 3], p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|i| {
            let c = ((p[i] - origin[i]) / cell).floor();
            if c <= 0.0 {
                0
            } else {
                (c as usize).min(dims[i] - 1)
            }
        })
    }

    fn cell_of(origin: &Vec3, cell: f64, dims: &[usize; 3], p: &Vec3) -> usize {
        let c = Self::coords(origin, cell, dims, p);
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    fn nearest(&self, points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let c = Self::coords(&self.origin, self.cell, &self.dims, q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = (0..3)
            .map(|i| c[i].max(self.dims[i] - 1 - c[i]))
            .max()
            .unwrap_or(0);
        let visit = |x: usize, y: usize, z: usize, best: &mut (usize, f64)| {
            let id = (z * self.dims[1] + y) * self.dims[0] + x;
            for &i in &self.items[self.starts[id] as usize..self.starts[id + 1] as usize] {
                let i = i as usize;
                let d = (points[i] - q).norm_squared();
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
        };
        let range = |axis: usize, r: usize| {
            let lo = c[axis].saturating_sub(r);
            let hi = (c[axis] + r).min(self.dims[axis] - 1);
            (lo, hi)
        };
        for ring in 0..=max_ring {
            let (z0, z1) = range(2, ring);
            let (y0, y1) = range(1, ring);
            let (x0, x1) = range(0, ring);
            for z in z0..=z1 {
                let z_on = z.abs_diff(c[2]) == ring;
                for y in y0..=y1 {
                    if z_on || y.abs_diff(c[1]) == ring {
                        for x in x0..=x1 {
                            visit(x, y, z, &mut best);
                        }
                    } else {
                        // Interior row of the shell: only its two ends.
                        if c[0] >= ring {
                            visit(c[0] - ring, y, z, &mut best);
                        }
                        if ring > 0 && c[0] + ring < self.dims[0] {
                            visit(c[0] + ring, y, z, &mut best);
                        }
                    }
                }
            }
            // Everything beyond this ring is at least `ring * cell` away.
            let reach = ring as f64 * self.cell;
            if best.0 != usize::MAX && best.1.sqrt() < reach {
                break;
            }
        }
        best
    }
}

impl<'a> PointIndex<'a> {
    /// Panics on an empty point set.
    pub fn new(points: &'a [Vec3]) -> Self {
        assert!(!points.is_empty(), "PointIndex needs at least one point");
        let grid = (points.len() >= BRUTE_FORCE_LIMIT).then(|| Grid::build(points));
        Self { points, grid }
    }

    pub fn brute_force(points: &'a [Vec3]) -> Self {
        assert!(!points.is_empty(), "PointIndex needs at least one point");
        Self { points, grid: None }
    }

    pub fn points(&self) -> &[Vec3] {
        self.points
    }

    /// Index of the nearest point and the squared distance to it.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        match &self.grid {
            Some(g) => g.nearest(self.points, q),
            None => {
                let mut best = (0, f64::INFINITY);
                for (i, p) in self.points.iter().enumerate() {
                    let d = (p - q).norm_squared();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best
            }
        }
    }
}
