use rand_distr::{Distribution, UnitSphere};

use super::{closest_point_on_triangle, Aabb, TriMesh, Vec3};
use crate::error::Result;
use crate::rng;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    // Leaf: first index into `order` and count. Interior: children.
    start: u32,
    count: u32,
    left: u32,
    right: u32,
}

/// Bounding volume hierarchy over a mesh's triangles, answering ray-parity
/// inside/outside queries and exact closest-point queries.
#[derive(Clone, Debug)]
pub struct MeshIndex {
    mesh: TriMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
    rays: [Vec3; 3],
    watertight: bool,
}

impl MeshIndex {
    /// Builds an index that supports distance queries on any mesh.
    pub fn new(mesh: &TriMesh) -> Self {
        let mut order: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * mesh.triangles.len() / LEAF_SIZE + 1);
        if !order.is_empty() {
            build(mesh, &centroids, &mut order, 0, &mut nodes);
        }
        // Fixed directions so labels never depend on call order.
        let mut r = rng::substream(0x5eed, "inside-rays", 0);
        let rays = [0, 1, 2].map(|_| Vec3::from(UnitSphere.sample(&mut r)));
        MeshIndex {
            mesh: mesh.clone(),
            nodes,
            order,
            rays,
            watertight: mesh.is_watertight(),
        }
    }

    /// Builds an index and requires the mesh to be watertight.
    pub fn watertight(mesh: &TriMesh) -> Result<Self> {
        mesh.check_watertight()?;
        Ok(Self::new(mesh))
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes
            .first()
            .map(|n| n.bounds)
            .unwrap_or_else(Aabb::empty)
    }

    /// Majority vote over the crossing parity of three fixed rays.
    ///
    /// Only meaningful on watertight meshes; see [`MeshIndex::watertight`].
    pub fn inside(&self, x: &Vec3) -> bool {
        debug_assert!(self.watertight, "inside query on a non-watertight mesh");
        if !self.bounds().contains(x) {
            return false;
        }
        let odd = self
            .rays
            .iter()
            .filter(|d| self.crossings(x, d) % 2 == 1)
            .count();
        odd >= 2
    }

    /// Number of triangles crossed by the ray `origin + t * dir`, t > 0.
    pub fn crossings(&self, origin: &Vec3, dir: &Vec3) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits = 0;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if !ray_hits_box(origin, &inv, &node.bounds) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = self.mesh.corners(t as usize);
                    if ray_hits_triangle(origin, dir, &a, &b, &c) {
                        hits += 1;
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        hits
    }

    /// Closest point on the surface and its squared distance.
    pub fn closest_point(&self, x: &Vec3) -> Option<(Vec3, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (Vec3::zeros(), f64::INFINITY);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_squared(x) >= best.1 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = self.mesh.corners(t as usize);
                    let q = closest_point_on_triangle(x, &a, &b, &c);
                    let d = (q - x).norm_squared();
                    if d < best.1 {
                        best = (q, d);
                    }
                }
            } else {
                let l = &self.nodes[node.left as usize];
                let r = &self.nodes[node.right as usize];
                // Visit the nearer child first.
                if l.bounds.distance_squared(x) < r.bounds.distance_squared(x) {
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

    pub fn distance(&self, x: &Vec3) -> f64 {
        self.closest_point(x).map_or(f64::INFINITY, |(_, d)| d.sqrt())
    }

    /// Negative inside, positive outside.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let d = self.distance(x);
        if self.inside(x) {
            -d
        } else {
            d
        }
    }
}

/// Ray-parity inside test against a watertight mesh.
pub fn inside_outside(mesh: &TriMesh, x: &Vec3) -> Result<bool> {
    Ok(MeshIndex::watertight(mesh)?.inside(x))
}

fn build(
    mesh: &TriMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut bounds = Aabb::empty();
    let mut cb = Aabb::empty();
    for &t in order.iter() {
        for v in mesh.corners(t as usize) {
            bounds.grow(&v);
        }
        cb.grow(&centroids[t as usize]);
    }
    let id = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        start: offset as u32,
        count: order.len() as u32,
        left: 0,
        right: 0,
    });
    if order.len() <= LEAF_SIZE {
        return id;
    }
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build(mesh, centroids, lo, offset, nodes);
    let right = build(mesh, centroids, hi, offset + mid, nodes);
    let n = &mut nodes[id as usize];
    n.count = 0;
    n.left = left;
    n.right = right;
    id
}

fn ray_hits_box(origin: &Vec3, inv: &Vec3, b: &Aabb) -> bool {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for k in 0..3 {
        let t1 = (b.min[k] - origin[k]) * inv[k];
        let t2 = (b.max[k] - origin[k]) * inv[k];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

// Moller-Trumbore, counting only hits strictly in front of the origin.
fn ray_hits_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 0.0
}
