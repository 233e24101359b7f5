//! Procedural watertight meshes: subdivided cube, icosphere, torus.

use std::collections::HashMap;

use super::TriMesh;
use crate::geometry::{BBox3D, Vec3};

/// Cube spanning `[-0.5, 0.5]³` with `n` quads per edge, outward-facing, shared vertices.
pub fn cube(n: usize) -> TriMesh {
    let n = n.max(1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |p: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push(Vec3::new(
                p[0] as f64 / n as f64 - 0.5,
                p[1] as f64 / n as f64 - 0.5,
                p[2] as f64 / n as f64 - 0.5,
            ));
            vertices.len() - 1
        })
    };
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let at = |du: usize, dv: usize| {
                        let mut p = [0usize; 3];
                        p[axis] = side;
                        p[u] = i + du;
                        p[v] = j + dv;
                        p
                    };
                    let q = [
                        vid(at(0, 0), &mut vertices),
                        vid(at(1, 0), &mut vertices),
                        vid(at(1, 1), &mut vertices),
                        vid(at(0, 1), &mut vertices),
                    ];
                    if side == n {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    TriMesh::from_parts(vertices, faces)
}

/// Mesh of a box's surface, 12 triangles.
pub fn box_mesh(b: &BBox3D) -> TriMesh {
    super::place_mesh(&cube(1), b)
}

/// Icosphere centered at the origin. `levels = 3` gives 642 vertices.
pub fn icosphere(radius: f64, levels: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let a = mid(f[0], f[1], &mut vertices);
            let b = mid(f[1], f[2], &mut vertices);
            let c = mid(f[2], f[0], &mut vertices);
            next.push([f[0], a, c]);
            next.push([f[1], b, a]);
            next.push([f[2], c, b]);
            next.push([a, b, c]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriMesh::from_parts(vertices, faces)
}

/// Torus around the y axis with ring radius `major` and tube radius `minor`.
pub fn torus(major: f64, minor: f64, segments: usize, sides: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(segments * sides);
    for i in 0..segments {
        let u = i as f64 / segments as f64 * std::f64::consts::TAU;
        for j in 0..sides {
            let v = j as f64 / sides as f64 * std::f64::consts::TAU;
            let r = major + minor * v.cos();
            vertices.push(Vec3::new(r * u.cos(), minor * v.sin(), r * u.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % segments) * sides + (j % sides);
    let mut faces = Vec::with_capacity(2 * segments * sides);
    for i in 0..segments {
        for j in 0..sides {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            faces.push([a, c, b]);
            faces.push([a, d, c]);
        }
    }
    TriMesh::from_parts(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_closed_manifolds() {
        let s = icosphere(1.0, 3);
        assert_eq!(s.vertices().len(), 642);
        assert_eq!(s.euler_characteristic(), 2);
        s.check_watertight().unwrap();

        let c = cube(4);
        assert_eq!(c.vertices().len(), 6 * 16 + 2);
        assert_eq!(c.euler_characteristic(), 2);
        c.check_watertight().unwrap();

        let t = torus(1.0, 0.3, 24, 12);
        assert_eq!(t.euler_characteristic(), 0);
        t.check_watertight().unwrap();
    }

    #[test]
    fn cube_faces_point_outward() {
        let c = cube(3);
        for fi in 0..c.faces().len() {
            let [a, b, d] = c.triangle(fi);
            let n = (b - a).cross(&(d - a));
            let centroid = (a + b + d) / 3.0;
            assert!(n.dot(&centroid) > 0.0);
        }
    }
}
