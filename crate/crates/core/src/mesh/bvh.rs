use crate::geometry::Vec3;

use super::TriMesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: faces `order[start..start + count]`. Inner nodes have `count == 0`.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Axis-aligned bounding-volume hierarchy over the faces of one mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

fn tri_bounds(t: &[Vec3; 3]) -> (Vec3, Vec3) {
    (t[0].inf(&t[1]).inf(&t[2]), t[0].sup(&t[1]).sup(&t[2]))
}

fn box_dist2(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let v = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            0.0
        };
        d2 += v * v;
    }
    d2
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.faces().len();
        let tris: Vec<[Vec3; 3]> = (0..n).map(|f| mesh.triangle(f)).collect();
        let centers: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: (0..n).collect(),
        };
        if n > 0 {
            bvh.build_node(&tris, &centers, 0, n);
        }
        bvh
    }

    fn build_node(&mut self, tris: &[[Vec3; 3]], centers: &[Vec3], start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &f in &self.order[start..end] {
            let (a, b) = tri_bounds(&tris[f]);
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            count: end - start,
            left: 0,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut clo = Vec3::repeat(f64::INFINITY);
        let mut chi = Vec3::repeat(f64::NEG_INFINITY);
        for &f in &self.order[start..end] {
            clo = clo.inf(&centers[f]);
            chi = chi.sup(&centers[f]);
        }
        let ext = chi - clo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        // stable tie-break on face index keeps the tree deterministic
        self.order[start..end].sort_by(|&a, &b| {
            centers[a][axis]
                .partial_cmp(&centers[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let left = self.build_node(tris, centers, start, mid);
        let right = self.build_node(tris, centers, mid, end);
        let node = &mut self.nodes[id];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    /// Squared distance to the nearest face and that face's index.
    pub fn nearest(&self, mesh: &TriMesh, p: &Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if box_dist2(p, &node.lo, &node.hi) > best.0 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start..node.start + node.count] {
                    let t = mesh.triangle(f);
                    let q = closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
                    let d2 = (p - q).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && f < best.1) {
                        best = (d2, f);
                    }
                }
            } else {
                let l = &self.nodes[node.left];
                let r = &self.nodes[node.right];
                let dl = box_dist2(p, &l.lo, &l.hi);
                let dr = box_dist2(p, &r.lo, &r.hi);
                // push the farther child first so the nearer is visited first
                if dl <= dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        Some(best)
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_point_regions() {
        let a = Vec3::zeros();
        let b = Vec3::x();
        let c = Vec3::y();
        // interior projection
        let q = closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        // vertex region
        let q = closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(q, a);
        // edge region (hypotenuse)
        let q = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }
}
