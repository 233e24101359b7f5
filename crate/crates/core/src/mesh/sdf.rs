use rayon::prelude::*;

use super::{Bvh, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::{BBox3D, Vec3};

/// Value stored for cells when the mesh union is empty.
pub const EMPTY_DISTANCE: f64 = 1.0e6;

/// Distance (in cell units) under which a query counts as lying on a cell-center plane.
const NODE_TOLERANCE: f64 = 1e-9;

/// A mesh with its BVH and bounds, ready for repeated distance and inside queries.
#[derive(Debug, Clone)]
pub struct MeshIndex {
    mesh: TriMesh,
    bvh: Bvh,
    lo: Vec3,
    hi: Vec3,
}

impl MeshIndex {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let bvh = Bvh::build(&mesh);
        let (lo, hi) = mesh.aabb();
        Ok(Self { mesh, bvh, lo, hi })
    }

    /// Like [`MeshIndex::new`] but rejects meshes that are not closed.
    pub fn watertight(mesh: TriMesh) -> Result<Self> {
        mesh.check_watertight()?;
        Self::new(mesh)
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> f64 {
        self.bvh
            .nearest(&self.mesh, p)
            .map(|(d2, _)| d2.sqrt())
            .unwrap_or(f64::INFINITY)
    }

    fn in_bounds(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }

    /// Generalized winding number; exactly zero outside the mesh bounds.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        if !self.in_bounds(p) {
            return 0.0;
        }
        winding_number(p, &self.mesh)
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        self.winding_number(p).abs() >= 0.5
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = self.unsigned_distance(p);
        if d == 0.0 {
            0.0
        } else if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

/// Signed distance to a union of closed meshes: the minimum of the per-mesh signed distances.
pub(crate) fn union_signed_distance(indices: &[MeshIndex], p: &Vec3) -> f64 {
    if indices.is_empty() {
        return EMPTY_DISTANCE;
    }
    indices
        .iter()
        .map(|m| m.signed_distance(p))
        .fold(f64::INFINITY, f64::min)
}

/// Sum of signed solid angles subtended by the faces, over 4π.
pub fn winding_number(p: &Vec3, mesh: &TriMesh) -> f64 {
    let mut total = 0.0;
    for f in mesh.faces() {
        let a = mesh.vertices()[f[0]] - p;
        let b = mesh.vertices()[f[1]] - p;
        let c = mesh.vertices()[f[2]] - p;
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let det = a.dot(&b.cross(&c));
        let div = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * det.atan2(div);
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Axis-aligned grid of signed distances sampled at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    origin: Vec3,
    cell_size: Vec3,
    dims: [usize; 3],
    values: Vec<f64>,
}

/// Interpolated value and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    pub gradient: Vec3,
}

impl SdfGrid {
    pub fn new(origin: Vec3, cell_size: Vec3, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if !cell_size.iter().all(|&c| c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput("SDF cell size must be positive".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("SDF dims must be positive".into()));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: dims[0] * dims[1] * dims[2],
            });
        }
        Ok(Self {
            origin,
            cell_size,
            dims,
            values,
        })
    }

    /// Sample the union of `indices` over the region `[lo, hi]` with `dims` cells per axis.
    pub(crate) fn sample_region(indices: &[MeshIndex], lo: Vec3, hi: Vec3, dims: [usize; 3]) -> Self {
        let cell_size = Vec3::new(
            (hi.x - lo.x) / dims[0] as f64,
            (hi.y - lo.y) / dims[1] as f64,
            (hi.z - lo.z) / dims[2] as f64,
        );
        let mut grid = Self {
            origin: lo,
            cell_size,
            dims,
            values: Vec::new(),
        };
        let total = dims[0] * dims[1] * dims[2];
        grid.values = (0..total)
            .into_par_iter()
            .map(|flat| {
                let i = flat % dims[0];
                let j = (flat / dims[0]) % dims[1];
                let k = flat / (dims[0] * dims[1]);
                union_signed_distance(indices, &grid.cell_center(i, j, k))
            })
            .collect();
        grid
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn cell_size(&self) -> Vec3 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let ext = Vec3::new(
            self.cell_size.x * self.dims[0] as f64,
            self.cell_size.y * self.dims[1] as f64,
            self.cell_size.z * self.dims[2] as f64,
        );
        (self.origin, self.origin + ext)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                (i as f64 + 0.5) * self.cell_size.x,
                (j as f64 + 0.5) * self.cell_size.y,
                (k as f64 + 0.5) * self.cell_size.z,
            )
    }

    /// Largest cell extent.
    pub fn max_cell(&self) -> f64 {
        self.cell_size.max()
    }

    /// Trilinear interpolation of the cell-center values with its analytic gradient.
    ///
    /// Inside the bounds but beyond the outermost cell centers the value is held constant along
    /// that axis. Outside the bounds the value of the nearest boundary point is increased by the
    /// distance to the bounds. On a cell-center plane, where the interpolant has a kink, the
    /// gradient component across the plane is the mean of the two one-sided slopes.
    pub fn query(&self, p: &Vec3) -> SdfSample {
        let (lo, hi) = self.bounds();
        let clamped = p.sup(&lo).inf(&hi);
        let outside = p - clamped;
        let dist = outside.norm();

        let mut base = [0usize; 3];
        let mut t = [0.0f64; 3];
        // continuous cell coordinate, unclamped to the center range
        let mut u = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            u[a] = (clamped[a] - self.origin[a]) / self.cell_size[a] - 0.5;
            if n == 1 {
                continue;
            }
            let uc = u[a].clamp(0.0, (n - 1) as f64);
            let i0 = (uc.floor() as usize).min(n - 2);
            base[a] = i0;
            t[a] = uc - i0 as f64;
        }

        let mut value = 0.0;
        self.for_corners(&base, &t, |v, w| value += v * w[0] * w[1] * w[2]);

        let mut gradient = Vec3::zeros();
        for a in 0..3 {
            let n = self.dims[a];
            if n == 1 {
                continue;
            }
            let max = (n - 1) as f64;
            let m = u[a].round();
            let on_node = (u[a] - m).abs() < NODE_TOLERANCE && m >= 0.0 && m <= max;
            gradient[a] = if on_node {
                let m = m as usize;
                let left = if m >= 1 { self.slope(a, &base, &t, m - 1, 1.0) } else { 0.0 };
                let right = if m + 1 < n { self.slope(a, &base, &t, m, 0.0) } else { 0.0 };
                0.5 * (left + right)
            } else if u[a] < 0.0 || u[a] > max {
                0.0
            } else {
                self.slope(a, &base, &t, base[a], t[a])
            };
        }
        if dist > 0.0 {
            value += dist;
            gradient += outside / dist;
        }
        SdfSample { value, gradient }
    }

    /// True when the cell centers within `cells` cells of `p` (per axis, after clamping `p` to
    /// the bounds) do not all share one strict sign.
    pub fn near_sign_change(&self, p: &Vec3, cells: usize) -> bool {
        let (lo, hi) = self.bounds();
        let c = p.sup(&lo).inf(&hi);
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let u = (c[a] - self.origin[a]) / self.cell_size[a] - 0.5;
            let max = (self.dims[a] - 1) as f64;
            let from = (u - cells as f64).floor().clamp(0.0, max) as usize;
            let to = (u + cells as f64).ceil().clamp(0.0, max) as usize;
            range[a] = (from, to);
        }
        let (mut neg, mut pos) = (false, false);
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let v = self.value(i, j, k);
                    neg |= v <= 0.0;
                    pos |= v >= 0.0;
                    if neg && pos {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Visit the 8 interpolation corners with their per-axis weights.
    fn for_corners(&self, base: &[usize; 3], t: &[f64; 3], mut f: impl FnMut(f64, [f64; 3])) {
        for corner in 0..8 {
            let di = [(corner & 1), (corner >> 1) & 1, (corner >> 2) & 1];
            let mut idx = [0usize; 3];
            let mut w = [0.0f64; 3];
            for a in 0..3 {
                let step = usize::from(self.dims[a] > 1);
                idx[a] = base[a] + di[a] * step;
                w[a] = if di[a] == 1 { t[a] } else { 1.0 - t[a] };
            }
            f(self.value(idx[0], idx[1], idx[2]), w);
        }
    }

    /// Slope along `axis` inside cell `cell` at fractional position `ta`, other axes unchanged.
    fn slope(&self, axis: usize, base: &[usize; 3], t: &[f64; 3], cell: usize, ta: f64) -> f64 {
        let mut b = *base;
        let mut tt = *t;
        b[axis] = cell;
        tt[axis] = ta;
        let mut d = 0.0;
        let mut corner = 0usize;
        self.for_corners(&b, &tt, |v, w| {
            let hi = (corner >> axis) & 1 == 1;
            let mut prod = if hi { 1.0 } else { -1.0 };
            for (a, wa) in w.iter().enumerate() {
                if a != axis {
                    prod *= wa;
                }
            }
            d += v * prod;
            corner += 1;
        });
        d / self.cell_size[axis]
    }
}

/// Voxelize `bbox`'s axis-aligned bounds into `resolution³` cells and store the signed distance
/// from each cell center to the union of `meshes`.
pub fn build_sdf(meshes: &[TriMesh], bbox: &BBox3D, resolution: usize) -> Result<SdfGrid> {
    if resolution < 2 {
        return Err(Error::InvalidInput(format!(
            "SDF resolution must be at least 2, got {resolution}"
        )));
    }
    let indices = meshes
        .iter()
        .map(|m| MeshIndex::watertight(m.clone()))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = bbox.aabb();
    Ok(SdfGrid::sample_region(&indices, lo, hi, [resolution; 3]))
}

/// `sdf_query` as a free function.
pub fn sdf_query(grid: &SdfGrid, p: &Vec3) -> SdfSample {
    grid.query(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn ramp_grid() -> SdfGrid {
        let dims = [4, 3, 5];
        let mut values = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = i as f64;
                    let y = j as f64;
                    let z = k as f64;
                    values.push((x * 1.3 - y * y * 0.7 + z * x * 0.2).sin());
                }
            }
        }
        SdfGrid::new(Vec3::new(-1.0, 0.5, 2.0), Vec3::new(0.5, 0.25, 0.4), dims, values).unwrap()
    }

    #[test]
    fn query_hits_stored_values_and_midpoints() {
        let g = ramp_grid();
        for (i, j, k) in [(0, 0, 0), (3, 2, 4), (1, 1, 2)] {
            let s = g.query(&g.cell_center(i, j, k));
            assert!((s.value - g.value(i, j, k)).abs() < 1e-12);
        }
        let mid = (g.cell_center(1, 1, 2) + g.cell_center(2, 1, 2)) * 0.5;
        let want = 0.5 * (g.value(1, 1, 2) + g.value(2, 1, 2));
        assert!((g.query(&mid).value - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = ramp_grid();
        // the last point is outside on two axes, where the distance term is curved
        let pts = [
            (Vec3::new(-0.37, 0.71, 2.53), 1e-6),
            (Vec3::new(0.12, 0.93, 3.11), 1e-6),
            (Vec3::new(1.6, 0.2, 2.9), 1e-4),
        ];
        for (p, tol) in pts {
            let s = g.query(&p);
            for a in 0..3 {
                let h = g.cell_size()[a] / 100.0;
                let mut e = Vec3::zeros();
                e[a] = h;
                let fd = (g.query(&(p + e)).value - g.query(&(p - e)).value) / (2.0 * h);
                assert!((fd - s.gradient[a]).abs() < tol, "axis {a}: {fd} vs {}", s.gradient[a]);
            }
        }
    }

    #[test]
    fn node_gradient_is_mean_of_one_sided_slopes() {
        let g = ramp_grid();
        // interior node, boundary node, and a node perturbed by rounding noise
        for (i, j, k, jitter) in [(1, 1, 2, 0.0), (0, 1, 2, 0.0), (3, 2, 4, 0.0), (2, 1, 1, 1e-15)] {
            let p = g.cell_center(i, j, k) + Vec3::repeat(jitter);
            let s = g.query(&p);
            for a in 0..3 {
                let h = 1e-7;
                let mut e = Vec3::zeros();
                e[a] = h;
                let fd = (g.query(&(p + e)).value - g.query(&(p - e)).value) / (2.0 * h);
                assert!((fd - s.gradient[a]).abs() < 1e-6, "({i},{j},{k}) axis {a}: {fd} vs {}", s.gradient[a]);
            }
        }
    }

    #[test]
    fn continuous_across_cell_boundaries() {
        let g = ramp_grid();
        // boundary between cells 1 and 2 along x lies at origin.x + 2 * cell.x
        let x = g.origin().x + 2.0 * g.cell_size().x;
        let p = Vec3::new(x, 0.83, 2.77);
        let eps = 1e-12;
        let l = g.query(&Vec3::new(x - eps, p.y, p.z)).value;
        let r = g.query(&Vec3::new(x + eps, p.y, p.z)).value;
        assert!((l - r).abs() < 1e-9);
    }

    #[test]
    fn outside_reads_far() {
        let g = ramp_grid();
        let (lo, _) = g.bounds();
        let inner = g.query(&lo);
        let p = lo - Vec3::new(3.0, 4.0, 0.0);
        let outer = g.query(&p);
        assert!((outer.value - (inner.value + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn sphere_grid_sign_pattern() {
        let sphere = shapes::icosphere(1.0, 3);
        let b = BBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(2.0)).unwrap();
        let g = build_sdf(&[sphere], &b, 8).unwrap();
        assert!(g.value(3, 3, 3) < 0.0 && g.value(4, 4, 4) < 0.0);
        assert!(g.value(0, 0, 0) > 0.0 && g.value(7, 7, 7) > 0.0);
    }

    #[test]
    fn empty_union_is_far() {
        let b = BBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(2.0)).unwrap();
        let g = build_sdf(&[], &b, 4).unwrap();
        assert!(g.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_open_meshes() {
        let tri = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let b = BBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(2.0)).unwrap();
        assert!(matches!(build_sdf(&[tri], &b, 4), Err(Error::NotWatertight { .. })));
    }
}
