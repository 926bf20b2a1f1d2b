//! Deterministic watertight test shapes with analytic membership tests.

use std::collections::HashMap;

use crate::geom::{TriMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixtureKind {
    Icosphere { subdivisions: u32, radius: f64 },
    Box { size: Vec3 },
    Torus { major: f64, minor: f64 },
    /// Four axis-aligned boxes: seat, back rest and two side panels.
    Chair,
}

impl FixtureKind {
    pub fn mesh(&self) -> TriMesh {
        match *self {
            FixtureKind::Icosphere {
                subdivisions,
                radius,
            } => icosphere(subdivisions, radius),
            FixtureKind::Box { size } => box_mesh(Vec3::zeros(), size),
            FixtureKind::Torus { major, minor } => torus(major, minor, 64, 32),
            FixtureKind::Chair => chair(),
        }
    }

    /// Membership in the ideal (non-faceted) shape.
    pub fn contains(&self, p: &Vec3) -> bool {
        match *self {
            FixtureKind::Icosphere { radius, .. } => p.norm() < radius,
            FixtureKind::Box { size } => (0..3).all(|k| p[k].abs() < 0.5 * size[k]),
            FixtureKind::Torus { major, minor } => {
                let q = (p.x * p.x + p.y * p.y).sqrt() - major;
                q * q + p.z * p.z < minor * minor
            }
            FixtureKind::Chair => CHAIR_BOXES.iter().any(|(lo, hi)| {
                (0..3).all(|k| {
                    let v = p[k] / CHAIR_UNIT;
                    v > lo[k] as f64 && v < hi[k] as f64
                })
            }),
        }
    }
}

pub fn make_fixture(kind: FixtureKind) -> TriMesh {
    kind.mesh()
}

/// Geodesic sphere from a subdivided icosahedron; `20 * 4^subdivisions` triangles.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) * 0.5).normalize());
                vertices.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriMesh {
        vertices,
        triangles,
    }
}

// Corner `c` of a unit cell sits at (c & 1, c >> 1 & 1, c >> 2 & 1). Faces are
// listed counter-clockwise as seen from outside.
pub(crate) const CUBE_FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

/// Axis-aligned box with the given center and edge lengths, 12 triangles.
pub fn box_mesh(center: Vec3, size: Vec3) -> TriMesh {
    let vertices = (0..8)
        .map(|c| {
            let unit = Vec3::new((c & 1) as f64, (c >> 1 & 1) as f64, (c >> 2 & 1) as f64);
            center + (unit - Vec3::repeat(0.5)).component_mul(&size)
        })
        .collect();
    let mut triangles = Vec::with_capacity(12);
    for f in CUBE_FACES {
        let [a, b, c, d] = f.map(|i| i as u32);
        triangles.push([a, b, c]);
        triangles.push([a, c, d]);
    }
    TriMesh {
        vertices,
        triangles,
    }
}

/// Torus around the z axis with `segments` steps around the ring and `sides` around the tube.
pub fn torus(major: f64, minor: f64, segments: usize, sides: usize) -> TriMesh {
    let tau = std::f64::consts::TAU;
    let mut vertices = Vec::with_capacity(segments * sides);
    for i in 0..segments {
        let u = tau * i as f64 / segments as f64;
        for j in 0..sides {
            let v = tau * j as f64 / sides as f64;
            let rho = major + minor * v.cos();
            vertices.push(Vec3::new(rho * u.cos(), rho * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: usize, j: usize| ((i % segments) * sides + j % sides) as u32;
    let mut triangles = Vec::with_capacity(2 * segments * sides);
    for i in 0..segments {
        for j in 0..sides {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriMesh {
        vertices,
        triangles,
    }
}

const CHAIR_UNIT: f64 = 0.1;

// Lattice boxes (min, max) in units of CHAIR_UNIT, y up, mirror-symmetric in x.
const CHAIR_BOXES: [([i32; 3], [i32; 3]); 4] = [
    ([-4, 4, -4], [4, 6, 4]),
    ([-4, 6, 2], [4, 14, 4]),
    ([-4, 0, -4], [-2, 4, 4]),
    ([2, 0, -4], [4, 4, 4]),
];

/// Union of four boxes, built as the boundary of their voxelization so the
/// result is a single closed manifold surface.
pub fn chair() -> TriMesh {
    voxel_union(&CHAIR_BOXES, CHAIR_UNIT)
}

fn voxel_union(boxes: &[([i32; 3], [i32; 3])], unit: f64) -> TriMesh {
    let occupied = |c: [i32; 3]| {
        boxes
            .iter()
            .any(|(lo, hi)| (0..3).all(|k| c[k] >= lo[k] && c[k] < hi[k]))
    };
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for (a, b) in boxes {
        for k in 0..3 {
            lo[k] = lo[k].min(a[k]);
            hi[k] = hi[k].max(b[k]);
        }
    }
    let mut ids: HashMap<[i32; 3], u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    let mut vertex = |p: [i32; 3], mesh: &mut TriMesh| {
        *ids.entry(p).or_insert_with(|| {
            mesh.vertices
                .push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * unit);
            mesh.vertices.len() as u32 - 1
        })
    };
    // Neighbor offset for each entry of CUBE_FACES.
    const NORMALS: [[i32; 3]; 6] = [
        [-1, 0, 0],
        [1, 0, 0],
        [0, -1, 0],
        [0, 1, 0],
        [0, 0, -1],
        [0, 0, 1],
    ];
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                if !occupied([x, y, z]) {
                    continue;
                }
                for (face, n) in CUBE_FACES.iter().zip(NORMALS) {
                    if occupied([x + n[0], y + n[1], z + n[2]]) {
                        continue;
                    }
                    let q = face.map(|c| {
                        vertex(
                            [x + (c as i32 & 1), y + (c as i32 >> 1 & 1), z + (c as i32 >> 2 & 1)],
                            &mut mesh,
                        )
                    });
                    mesh.triangles.push([q[0], q[1], q[2]]);
                    mesh.triangles.push([q[0], q[2], q[3]]);
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::MeshIndex;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn icosphere_counts() {
        let s = icosphere(3, 1.0);
        assert_eq!(s.triangles.len(), 1280);
        assert!(s.is_watertight());
        assert_eq!(s.euler_characteristic(), 2);
        assert!(s.signed_volume() > 0.0);
    }

    #[test]
    fn unit_box_volume() {
        let b = box_mesh(Vec3::new(0.3, -2.0, 5.0), Vec3::repeat(1.0));
        assert!(b.is_watertight());
        assert!((b.signed_volume() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn torus_genus_one() {
        let t = torus(1.0, 0.3, 32, 16);
        assert!(t.is_watertight());
        assert_eq!(t.euler_characteristic(), 0);
        assert!(t.signed_volume() > 0.0);
    }

    #[test]
    fn chair_closed_single_component() {
        let c = chair();
        assert!(c.is_watertight());
        assert_eq!(c.euler_characteristic(), 2);
        assert_eq!(c.connected_components(), 1);
        // 8*2*8 + 8*8*2 + 2 * (2*4*8) lattice cells of volume 0.001.
        assert!((c.signed_volume() - 0.384).abs() < 1e-9, "{}", c.signed_volume());
    }

    #[test]
    fn membership_agrees_with_parity() {
        let kinds = [
            FixtureKind::Icosphere {
                subdivisions: 5,
                radius: 1.0,
            },
            FixtureKind::Box {
                size: Vec3::new(1.0, 2.0, 0.5),
            },
            FixtureKind::Torus {
                major: 1.0,
                minor: 0.4,
            },
            FixtureKind::Chair,
        ];
        for kind in kinds {
            let mesh = kind.mesh();
            let idx = MeshIndex::watertight(&mesh).unwrap();
            let b = mesh.bounds().scaled(1.2);
            let mut r = rng::substream(1, "membership", 0);
            let mut checked = 0;
            for _ in 0..10_000 {
                let p = b.min
                    + Vec3::new(r.random(), r.random(), r.random()).component_mul(&b.extent());
                // Skip the band where facets deviate from the ideal surface.
                if idx.distance(&p) < 0.01 {
                    continue;
                }
                checked += 1;
                assert_eq!(idx.inside(&p), kind.contains(&p), "{kind:?} at {p:?}");
            }
            assert!(checked > 8000);
        }
    }
}
