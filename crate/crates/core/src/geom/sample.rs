use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{Aabb, MeshIndex, TriMesh, Vec3};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Where a labeled sample was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleOrigin {
    NearSurface,
    Uniform,
}

/// Query points with ground-truth labels and per-point loss weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSampleSet {
    pub points: Vec<Vec3>,
    pub inside: Vec<bool>,
    pub weights: Vec<f64>,
    pub origins: Vec<SampleOrigin>,
}

impl LabeledSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, inside: bool, weight: f64, origin: SampleOrigin) {
        self.points.push(p);
        self.inside.push(inside);
        self.weights.push(weight);
        self.origins.push(origin);
    }

    pub fn extend(&mut self, other: LabeledSampleSet) {
        self.points.extend(other.points);
        self.inside.extend(other.inside);
        self.weights.extend(other.weights);
        self.origins.extend(other.origins);
    }

    /// Ground-truth indicator: 0 inside, 1 outside.
    pub fn indicator(&self, i: usize) -> f64 {
        if self.inside[i] {
            0.0
        } else {
            1.0
        }
    }

    pub fn inside_fraction(&self) -> f64 {
        self.inside.iter().filter(|&&b| b).count() as f64 / self.len() as f64
    }
}

/// Points drawn uniformly by area, with the normal of the source triangle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

/// Area-weighted uniform surface sampling.
pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    let mut rng = Rng::seed_from_u64(seed);
    sample_surface_with(mesh, count, &mut rng)
}

pub(crate) fn sample_surface_with(
    mesh: &TriMesh,
    count: usize,
    rng: &mut Rng,
) -> Result<SurfaceSamples> {
    if count == 0 {
        return Ok(SurfaceSamples::default());
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh);
    }
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(count),
        normals: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let u = rng.random::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.corners(t);
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        out.points
            .push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
        out.normals
            .push((b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_default());
    }
    Ok(out)
}

/// Surface samples displaced by isotropic Gaussian noise and labeled by ray parity.
pub fn sample_near_surface(
    index: &MeshIndex,
    count: usize,
    sigma: f64,
    weight: f64,
    seed: u64,
) -> Result<LabeledSampleSet> {
    let mut rng = Rng::seed_from_u64(seed);
    let surface = sample_surface_with(index.mesh(), count, &mut rng)?;
    let points: Vec<Vec3> = if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidArgument(format!("sigma {sigma}: {e}")))?;
        surface
            .points
            .iter()
            .map(|p| {
                p + Vec3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                )
            })
            .collect()
    } else {
        surface.points
    };
    Ok(label(index, points, weight, SampleOrigin::NearSurface))
}

/// Points uniform in `bounds`, labeled by ray parity.
pub fn sample_uniform(
    bounds: &Aabb,
    count: usize,
    index: &MeshIndex,
    weight: f64,
    seed: u64,
) -> LabeledSampleSet {
    let mut rng = Rng::seed_from_u64(seed);
    let ext = bounds.extent();
    let points = (0..count)
        .map(|_| {
            bounds.min
                + Vec3::new(
                    rng.random::<f64>() * ext.x,
                    rng.random::<f64>() * ext.y,
                    rng.random::<f64>() * ext.z,
                )
        })
        .collect();
    label(index, points, weight, SampleOrigin::Uniform)
}

fn label(index: &MeshIndex, points: Vec<Vec3>, weight: f64, origin: SampleOrigin) -> LabeledSampleSet {
    let inside = points.par_iter().map(|p| index.inside(p)).collect();
    let n = points.len();
    LabeledSampleSet {
        points,
        inside,
        weights: vec![weight; n],
        origins: vec![origin; n],
    }
}
