//! Surface extraction by dense field evaluation and marching cubes.
//!
//! The 256-case table is generated rather than transcribed. On each cube
//! face the isoline segments are chosen so that inside corners are cut off
//! individually, a choice that depends only on the face's corner signs; two
//! cells sharing a face therefore always agree and the output is closed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::decoder::Activations;
use crate::error::{Error, Result};
use crate::fixtures::{icosphere, CUBE_FACES};
use crate::geom::{Aabb, TriMesh, Vec3};
use crate::model::{reflect, LdifModel, DEFAULT_ISOLEVEL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshingConfig {
    /// Grid nodes per axis.
    pub resolution: usize,
    /// Extraction box in model coordinates; see [`default_bounds`] when `None`.
    pub bounds: Option<Aabb>,
    pub isolevel: f64,
}

impl Default for MeshingConfig {
    fn default() -> Self {
        MeshingConfig {
            resolution: 128,
            bounds: None,
            isolevel: DEFAULT_ISOLEVEL,
        }
    }
}

/// Model-space box that encloses the surface: every Gaussian out to at
/// least three standard deviations, far enough that the summed amplitudes
/// cannot reach the isolevel beyond it, and never smaller than `[-0.6, 0.6]^3`.
pub fn default_bounds(model: &LdifModel, isolevel: f64) -> Aabb {
    let mut total: f64 = model
        .elements
        .iter()
        .enumerate()
        .map(|(i, e)| e.scale.abs() * if model.is_symmetric(i) { 2.0 } else { 1.0 })
        .sum();
    if !model.decoder.output_is_zero() {
        total *= 2.0;
    }
    let reach = if total > isolevel.abs() {
        (2.0 * (total / isolevel.abs()).ln()).sqrt()
    } else {
        0.0
    };
    let b = Aabb::cube(0.6);
    if model.elements.is_empty() {
        return b;
    }
    b.union(&model.support_bounds(reach.max(3.0)))
}

/// Field values on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub dims: [usize; 3],
    pub bounds: Aabb,
    /// Indexed `(i * ny + j) * nz + k`.
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn spacing(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::from_fn(|a, _| e[a] / (self.dims[a] - 1) as f64)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bounds.min + self.spacing().component_mul(&Vec3::new(i as f64, j as f64, k as f64))
    }

    /// Raw dump: a text line `FIELD nx ny nz minx miny minz maxx maxy maxz`
    /// followed by the values as little-endian `f32`.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let (lo, hi) = (self.bounds.min, self.bounds.max);
        writeln!(
            w,
            "FIELD {} {} {} {} {} {} {} {} {}",
            self.dims[0], self.dims[1], self.dims[2], lo.x, lo.y, lo.z, hi.x, hi.y, hi.z
        )?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

fn resolved_bounds(model: &LdifModel, cfg: &MeshingConfig) -> Result<Aabb> {
    if cfg.resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    if !(cfg.isolevel < 0.0) {
        return Err(Error::InvalidArgument("isolevel must be negative".into()));
    }
    let b = cfg
        .bounds
        .unwrap_or_else(|| default_bounds(model, cfg.isolevel));
    if b.is_empty() || (0..3).any(|a| !(b.extent()[a] > 0.0)) {
        return Err(Error::InvalidArgument(format!("degenerate bounds {b:?}")));
    }
    Ok(b)
}

/// Evaluates the model (in model coordinates) on the configured grid.
pub fn field_grid(model: &LdifModel, cfg: &MeshingConfig) -> Result<FieldGrid> {
    let bounds = resolved_bounds(model, cfg)?;
    let n = cfg.resolution;
    let mut grid = FieldGrid {
        dims: [n; 3],
        bounds,
        values: vec![0.0; n * n * n],
    };
    let spacing = grid.spacing();
    let prepared = model.prepare();
    let hidden = model.decoder.hidden;
    grid.values
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each_init(
            || Activations::new(hidden),
            |act, (i, slab)| {
                for j in 0..n {
                    for k in 0..n {
                        let p = bounds.min
                            + spacing.component_mul(&Vec3::new(i as f64, j as f64, k as f64));
                        slab[j * n + k] = prepared.eval_with(&p, act);
                    }
                }
            },
        );
    Ok(grid)
}

/// Cube edges as (lower corner, upper corner); edges 0-3 run along x,
/// 4-7 along y, 8-11 along z.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(u, v)| (u, v) == (a, b) || (u, v) == (b, a))
        .expect("adjacent corners")
}

/// Triangles (as cube edge triples) for one corner configuration, wound so
/// that normals point from inside to outside.
fn build_case(mask: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask >> c & 1 == 1;
    // next[e] = the edge that follows crossing e along the isoline loop.
    let mut next = [usize::MAX; 12];
    for face in CUBE_FACES {
        // Crossings in counter-clockwise order: (edge, leaves the inside?).
        let mut crossings = Vec::with_capacity(4);
        for s in 0..4 {
            let (a, b) = (face[s], face[(s + 1) % 4]);
            if inside(a) != inside(b) {
                crossings.push((edge_between(a, b), inside(a)));
            }
        }
        // Each leave crossing connects to the enter crossing just before it,
        // which cuts the inside corner between them off from the rest.
        let m = crossings.len();
        for (idx, &(e, leaves)) in crossings.iter().enumerate() {
            if leaves {
                let (prev, prev_leaves) = crossings[(idx + m - 1) % m];
                debug_assert!(!prev_leaves);
                next[e] = prev;
            }
        }
    }
    let mut tris = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut e = next[start];
        while e != start {
            seen[e] = true;
            lp.push(e);
            e = next[e];
        }
        triangulate(&lp, &mut tris).expect("every isoline loop has a face-free triangulation");
    }
    tris
}

fn share_face(a: usize, b: usize) -> bool {
    let on = |e: usize, f: &[usize; 4]| f.contains(&EDGES[e].0) && f.contains(&EDGES[e].1);
    CUBE_FACES.iter().any(|f| on(a, f) && on(b, f))
}

/// Triangulates a loop of crossings without diagonals between two crossings
/// on the same cube face. Such a diagonal would lie in the face, where the
/// neighboring cell may draw it too, leaving an edge with four triangles.
fn triangulate(lp: &[usize], out: &mut Vec<[u8; 3]>) -> Option<()> {
    let n = lp.len();
    if n == 3 {
        out.push([lp[0] as u8, lp[2] as u8, lp[1] as u8]);
        return Some(());
    }
    for i in 0..n {
        for j in i + 2..n {
            if (i == 0 && j == n - 1) || share_face(lp[i], lp[j]) {
                continue;
            }
            let first: Vec<usize> = lp[i..=j].to_vec();
            let second: Vec<usize> = lp[j..].iter().chain(&lp[..=i]).copied().collect();
            let mark = out.len();
            if triangulate(&first, out).is_some() && triangulate(&second, out).is_some() {
                return Some(());
            }
            out.truncate(mark);
        }
    }
    None
}

fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

/// Marching cubes on a sampled field; inside means `value < isolevel`.
pub fn polygonize(grid: &FieldGrid, isolevel: f64) -> TriMesh {
    let [nx, ny, nz] = grid.dims;
    let spacing = grid.spacing();
    let table = case_table();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut welded: HashMap<(usize, u8), u32> = HashMap::new();
    let corner = |i: usize, j: usize, k: usize, c: usize| (i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1));
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let mut mask = 0;
                for c in 0..8 {
                    let (a, b, d) = corner(i, j, k, c);
                    if grid.values[grid.index(a, b, d)] < isolevel {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let mut ids = [0u32; 12];
                let mut done = [false; 12];
                for tri in &table[mask] {
                    for &e in tri {
                        let e = e as usize;
                        if done[e] {
                            continue;
                        }
                        let (lo, hi) = EDGES[e];
                        let (a, b, d) = corner(i, j, k, lo);
                        let lo_idx = grid.index(a, b, d);
                        let (a2, b2, d2) = corner(i, j, k, hi);
                        let hi_idx = grid.index(a2, b2, d2);
                        let axis = (e / 4) as u8;
                        ids[e] = *welded.entry((lo_idx, axis)).or_insert_with(|| {
                            let (v0, v1) = (grid.values[lo_idx], grid.values[hi_idx]);
                            let t = (isolevel - v0) / (v1 - v0);
                            let mut p = grid.node(a, b, d);
                            p[axis as usize] += t * spacing[axis as usize];
                            vertices.push(p);
                            (vertices.len() - 1) as u32
                        });
                        done[e] = true;
                    }
                    triangles.push([ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]]);
                }
            }
        }
    }
    TriMesh {
        vertices,
        triangles,
    }
}

/// Extracts the `isolevel` surface of `model`. Vertices are returned in
/// object coordinates when the model carries a frame.
pub fn extract_mesh(model: &LdifModel, cfg: &MeshingConfig) -> Result<TriMesh> {
    let grid = field_grid(model, cfg)?;
    let mesh = polygonize(&grid, cfg.isolevel);
    if mesh.is_empty() {
        log::warn!("the field does not cross isolevel {} inside the grid", cfg.isolevel);
    }
    Ok(mesh.transformed(|p| model.to_object(p)))
}

/// Level-set radius, in units of the element radii, of an isolated Gaussian
/// with amplitude `scale`: `sqrt(2 ln(c / l))`. `None` when it never reaches `l`.
pub fn isolated_level_radius(scale: f64, isolevel: f64) -> Option<f64> {
    (scale < isolevel).then(|| (2.0 * (scale / isolevel).ln()).sqrt())
}

/// One ellipsoid per element (and per mirrored copy) at the level set of its
/// isolated Gaussian, in object coordinates, with the element index of every
/// triangle.
pub fn element_ellipsoids(model: &LdifModel, isolevel: f64) -> (TriMesh, Vec<u32>) {
    let unit = icosphere(3, 1.0);
    let mut out = TriMesh::default();
    let mut tags = Vec::new();
    for (i, e) in model.elements.iter().enumerate() {
        let Some(s) = isolated_level_radius(e.scale, isolevel) else {
            log::warn!("element {i} (c = {}) never reaches the isolevel", e.scale);
            continue;
        };
        let rot = e.rotation();
        let part = unit.transformed(|v| e.center + rot * (v.component_mul(&e.radii) * s));
        let mut copies = vec![part.clone()];
        if model.is_symmetric(i) {
            let mut m = part.transformed(|v| reflect(v, model.sym_axis));
            m.flip_orientation();
            copies.push(m);
        }
        for c in copies {
            tags.extend(std::iter::repeat_n(i as u32, c.triangles.len()));
            out.append(&c);
        }
    }
    (out.transformed(|p| model.to_object(p)), tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderWeights;
    use crate::model::ElementParams;

    fn single(radii: Vec3, scale: f64) -> LdifModel {
        LdifModel::new(
            vec![ElementParams {
                scale,
                center: Vec3::zeros(),
                radii,
                euler: Vec3::zeros(),
            }],
            vec![vec![0.0]],
            DecoderWeights::zeros(1, 2),
            0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn every_case_is_closed_and_consistent() {
        let table = case_table();
        assert!(table[0].is_empty() && table[255].is_empty());
        for (mask, tris) in table.iter().enumerate() {
            // Each used edge appears in a closed fan: directed boundary edges cancel.
            let mut boundary: HashMap<(u8, u8), i32> = HashMap::new();
            for t in tris {
                for s in 0..3 {
                    let (a, b) = (t[s], t[(s + 1) % 3]);
                    *boundary.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
                }
            }
            let crossing = (0..12)
                .filter(|&e| {
                    let (u, v) = EDGES[e];
                    (mask >> u & 1) != (mask >> v & 1)
                })
                .count();
            let used: std::collections::HashSet<u8> = tris.iter().flatten().copied().collect();
            assert_eq!(used.len(), crossing, "case {mask}");
            // Complement case has the same vertices.
            assert_eq!(
                table[255 - mask].iter().flatten().copied().collect::<std::collections::HashSet<_>>(),
                used
            );
        }
    }

    #[test]
    fn single_corner_normal_points_out() {
        // Only corner 0 inside: the normal must point away from it.
        let tris = &case_table()[1];
        assert_eq!(tris.len(), 1);
        let pos = |e: u8| {
            let (a, b) = EDGES[e as usize];
            let c = |c: usize| Vec3::new((c & 1) as f64, (c >> 1 & 1) as f64, (c >> 2 & 1) as f64);
            (c(a) + c(b)) * 0.5
        };
        let [a, b, c] = tris[0].map(pos);
        assert!((b - a).cross(&(c - a)).dot(&Vec3::repeat(1.0)) > 0.0);
    }

    #[test]
    fn sphere_radius_matches_level_set() {
        let rho = 0.1;
        let model = single(Vec3::repeat(rho), -1.0);
        let cfg = MeshingConfig::default();
        let mesh = extract_mesh(&model, &cfg).unwrap();
        let cell = field_grid(&model, &cfg).unwrap().spacing().x;
        let expect = rho * (2.0 * (1.0f64 / 0.07).ln()).sqrt();
        assert!((expect - 0.2306).abs() < 1e-4);
        for v in &mesh.vertices {
            assert!((v.norm() - expect).abs() <= 1.5 * cell);
        }
        mesh.check_watertight().unwrap();
        assert_eq!(mesh.euler_characteristic(), 2);
        assert_eq!(mesh.connected_components(), 1);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn vertices_lie_on_the_level_set() {
        let model = single(Vec3::new(0.12, 0.08, 0.1), -1.5);
        let mesh = extract_mesh(&model, &MeshingConfig { resolution: 64, ..Default::default() }).unwrap();
        let p = model.prepare();
        for v in &mesh.vertices {
            assert!((p.eval(v) - DEFAULT_ISOLEVEL).abs() <= 0.02);
        }
    }

    #[test]
    fn resolution_does_not_change_topology() {
        let model = single(Vec3::repeat(0.1), -1.0);
        for res in [32, 64] {
            let m = extract_mesh(&model, &MeshingConfig { resolution: res, ..Default::default() }).unwrap();
            assert_eq!(m.euler_characteristic(), 2);
            assert_eq!(m.connected_components(), 1);
        }
    }

    #[test]
    fn weak_field_gives_empty_mesh() {
        let model = single(Vec3::repeat(0.1), -0.01);
        let mesh = extract_mesh(&model, &MeshingConfig { resolution: 32, ..Default::default() }).unwrap();
        assert!(mesh.is_empty());
    }

    #[test]
    fn anisotropic_extents() {
        let rho = 0.06;
        let model = single(Vec3::new(2.0 * rho, rho, rho), -1.0);
        let mesh = extract_mesh(&model, &MeshingConfig::default()).unwrap();
        let e = mesh.bounds().extent();
        assert!((e.x / e.y - 2.0).abs() < 0.1, "{e:?}");
        assert!((e.y / e.z - 1.0).abs() < 0.05, "{e:?}");
    }

    #[test]
    fn ellipsoids_one_component_per_copy() {
        let mut model = single(Vec3::repeat(0.1), -1.0);
        let (m, tags) = element_ellipsoids(&model, DEFAULT_ISOLEVEL);
        assert_eq!(m.connected_components(), 1);
        assert!(tags.iter().all(|t| *t == 0));
        let r = 0.1 * isolated_level_radius(-1.0, DEFAULT_ISOLEVEL).unwrap();
        for v in &m.vertices {
            assert!((v.norm() - r).abs() < 1e-12);
        }

        model.elements[0].center = Vec3::new(0.4, 0.0, 0.0);
        model.sym_count = 1;
        let (m, _) = element_ellipsoids(&model, DEFAULT_ISOLEVEL);
        assert_eq!(m.connected_components(), 2);
        m.check_watertight().unwrap();
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn raw_dump_layout() {
        let model = single(Vec3::repeat(0.1), -1.0);
        let g = field_grid(&model, &MeshingConfig { resolution: 4, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.raw");
        g.write_raw(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        assert!(std::str::from_utf8(&bytes[..nl]).unwrap().starts_with("FIELD 4 4 4 "));
        assert_eq!(bytes.len() - nl - 1, 64 * 4);
        let first = f32::from_le_bytes(bytes[nl + 1..nl + 5].try_into().unwrap());
        assert_eq!(first, g.values[0] as f32);
    }
}
