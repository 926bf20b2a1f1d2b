use rayon::prelude::*;

use super::{Aabb, MeshIndex, TriMesh, Vec3};
use crate::error::{Error, Result};

pub const SDF_RESOLUTION: usize = 32;

/// Bounding box padding applied before sampling the grid.
const PADDING: f64 = 1.1;

/// Coarse signed distance samples on a regular lattice, negative inside.
///
/// Values sit at lattice nodes (cell corners); node `(i, j, k)` is stored at
/// `i + n * (j + n * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    pub values: Vec<f64>,
}

impl SdfGrid {
    /// Distance between neighboring nodes.
    pub fn spacing(&self) -> f64 {
        self.bounds.extent().x / (self.resolution - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bounds.min + Vec3::new(i as f64, j as f64, k as f64) * self.spacing()
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.resolution;
        self.values[i + n * (j + n * k)]
    }

    /// Trilinear interpolation and its gradient. `p` must lie inside `bounds`.
    pub fn sample(&self, p: &Vec3) -> (f64, Vec3) {
        let h = self.spacing();
        let n = self.resolution;
        let mut cell = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let u = (p[a] - self.bounds.min[a]) / h;
            let c = (u.floor().max(0.0) as usize).min(n - 2);
            cell[a] = c;
            t[a] = u - c as f64;
        }
        let [i, j, k] = cell;
        let c = |di, dj, dk| self.value(i + di, j + dj, k + dk);
        let (tx, ty, tz) = (t[0], t[1], t[2]);
        let c00 = c(0, 0, 0) * (1.0 - tx) + c(1, 0, 0) * tx;
        let c10 = c(0, 1, 0) * (1.0 - tx) + c(1, 1, 0) * tx;
        let c01 = c(0, 0, 1) * (1.0 - tx) + c(1, 0, 1) * tx;
        let c11 = c(0, 1, 1) * (1.0 - tx) + c(1, 1, 1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        let value = c0 * (1.0 - tz) + c1 * tz;

        let dx00 = c(1, 0, 0) - c(0, 0, 0);
        let dx10 = c(1, 1, 0) - c(0, 1, 0);
        let dx01 = c(1, 0, 1) - c(0, 0, 1);
        let dx11 = c(1, 1, 1) - c(0, 1, 1);
        let dx0 = dx00 * (1.0 - ty) + dx10 * ty;
        let dx1 = dx01 * (1.0 - ty) + dx11 * ty;
        let gx = dx0 * (1.0 - tz) + dx1 * tz;
        let gy = (c10 - c00) * (1.0 - tz) + (c11 - c01) * tz;
        let gz = c1 - c0;
        (value, Vec3::new(gx, gy, gz) / h)
    }

    pub fn interpolate(&self, p: &Vec3) -> f64 {
        self.sample(p).0
    }
}

/// Signed distance grid over the padded bounding cube of a watertight mesh.
pub fn build_sdf_grid(mesh: &TriMesh) -> Result<SdfGrid> {
    let index = MeshIndex::watertight(mesh)?;
    sdf_grid_from_index(&index)
}

pub fn sdf_grid_from_index(index: &MeshIndex) -> Result<SdfGrid> {
    if !index.is_watertight() {
        index.mesh().check_watertight()?;
    }
    let b = index.mesh().bounds();
    let edge = b.longest_edge();
    if !(edge > 0.0) {
        return Err(Error::DegenerateMesh);
    }
    // Cubic so that one cell width (and hence the center-loss threshold) is
    // the same along every axis.
    let half = Vec3::repeat(0.5 * edge * PADDING);
    let bounds = Aabb::new(b.center() - half, b.center() + half);
    let n = SDF_RESOLUTION;
    let h = bounds.extent().x / (n - 1) as f64;
    let values = (0..n * n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
            let p = bounds.min + Vec3::new(i as f64, j as f64, k as f64) * h;
            index.signed_distance(&p)
        })
        .collect();
    Ok(SdfGrid {
        resolution: n,
        bounds,
        values,
    })
}
