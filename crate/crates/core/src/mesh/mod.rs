//! Triangle meshes, distance queries and signed-distance grids.

mod bvh;
mod io;
mod sdf;
pub mod shapes;

use std::collections::BTreeMap;

pub use bvh::{closest_point_on_triangle, Bvh};
pub use io::{load_mesh, parse_obj, parse_ply, save_obj, write_obj};
pub use sdf::{build_sdf, sdf_query, winding_number, MeshIndex, SdfGrid, SdfSample};

use crate::error::{Error, Result};
use crate::geometry::{BBox3D, Vec3};

/// Faces with area below this are rejected at construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validated constructor: indices in range and no zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidInput(format!(
                    "face {fi} references vertex {bad} but mesh has {n} vertices"
                )));
            }
        }
        let mesh = Self { vertices, faces };
        for fi in 0..mesh.faces.len() {
            let area = mesh.face_area(fi);
            if !(area >= DEGENERATE_AREA) {
                return Err(Error::DegenerateFace { index: fi, area });
            }
        }
        Ok(mesh)
    }

    /// Skips validation; used for meshes derived from an already valid one.
    pub(crate) fn from_parts(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.faces.is_empty()
    }

    pub fn triangle(&self, fi: usize) -> [Vec3; 3] {
        let f = self.faces[fi];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.triangle(fi);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Axis-aligned bounds. Panics on an empty mesh.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Replace vertex positions keeping the face list.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            faces: self.faces.clone(),
        }
    }

    /// Every edge must be shared by exactly two faces.
    pub fn check_watertight(&self) -> Result<()> {
        let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        match edges.into_iter().find(|&(_, c)| c != 2) {
            Some((edge, count)) => Err(Error::NotWatertight { edge, count }),
            None if self.faces.is_empty() => Err(Error::EmptyMesh),
            None => Ok(()),
        }
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }
}

/// Uniformly scale and translate so the AABB is centered at the origin and its longest side
/// spans exactly 1.
pub fn normalize_unit_cube(mesh: &TriMesh) -> Result<TriMesh> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (lo, hi) = mesh.aabb();
    let center = (lo + hi) * 0.5;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::DegenerateConfiguration("mesh has zero extent".into()));
    }
    let scale = 1.0 / extent;
    let vertices = mesh.vertices.iter().map(|v| (v - center) * scale).collect();
    Ok(mesh.with_vertices(vertices))
}

/// Place a unit-cube mesh into a box: per-axis scale by size, yaw, then translate.
pub fn place_mesh(mesh: &TriMesh, bbox: &BBox3D) -> TriMesh {
    let r = bbox.rotation();
    let size = bbox.size();
    let c = bbox.centroid();
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| c + r * v.component_mul(&size))
        .collect();
    mesh.with_vertices(vertices)
}

/// Distance from `p` to the closest point of `mesh`.
pub fn unsigned_distance(p: &Vec3, mesh: &TriMesh) -> Result<f64> {
    Ok(MeshIndex::new(mesh.clone())?.unsigned_distance(p))
}

/// Negative inside, positive outside. Requires a watertight mesh.
pub fn signed_distance(p: &Vec3, mesh: &TriMesh) -> Result<f64> {
    mesh.check_watertight()?;
    Ok(MeshIndex::new(mesh.clone())?.signed_distance(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox3D;

    #[test]
    fn rejects_bad_indices_and_degenerate_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        let collinear = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(
            TriMesh::new(collinear, vec![[0, 1, 2]]),
            Err(Error::DegenerateFace { index: 0, .. })
        ));
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let m = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(m.check_watertight(), Err(Error::NotWatertight { count: 1, .. })));
        assert!(shapes::cube(1).check_watertight().is_ok());
    }

    #[test]
    fn normalize_examples() {
        let cube = shapes::cube(2);
        let n = normalize_unit_cube(&cube).unwrap();
        for (a, b) in cube.vertices().iter().zip(n.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }

        let sphere = shapes::icosphere(2.0, 2);
        let n = normalize_unit_cube(&sphere).unwrap();
        let (lo, hi) = n.aabb();
        assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
        for v in n.vertices() {
            assert!(v.norm() <= 0.5 + 1e-9);
        }

        let slab = place_mesh(
            &shapes::cube(1),
            &BBox3D::axis_aligned(Vec3::new(3.0, 1.0, 0.0), Vec3::new(2.0, 1.0, 1.0)).unwrap(),
        );
        let n = normalize_unit_cube(&slab).unwrap();
        let (lo, hi) = n.aabb();
        assert!((lo - Vec3::new(-0.5, -0.25, -0.25)).norm() < 1e-12);
        assert!((hi - Vec3::new(0.5, 0.25, 0.25)).norm() < 1e-12);

        let empty = TriMesh::from_parts(vec![], vec![]);
        assert!(matches!(normalize_unit_cube(&empty), Err(Error::EmptyMesh)));
    }

    #[test]
    fn place_mesh_examples() {
        let cube = shapes::cube(1);
        let id = BBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        assert_eq!(place_mesh(&cube, &id).vertices(), cube.vertices());

        let doubled = place_mesh(&cube, &BBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(2.0)).unwrap());
        for (a, b) in cube.vertices().iter().zip(doubled.vertices()) {
            assert!((b.norm() - 2.0 * a.norm()).abs() < 1e-12);
        }

        let b = BBox3D::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0), std::f64::consts::FRAC_PI_2)
            .unwrap();
        let placed = place_mesh(&cube, &b);
        assert_eq!(placed.faces(), cube.faces());
        for c in b.corners() {
            assert!(placed.vertices().iter().any(|v| (v - c).norm() < 1e-9));
        }
        for v in placed.vertices() {
            assert!(b.corners().iter().any(|c| (v - c).norm() < 1e-9));
        }
    }
}
