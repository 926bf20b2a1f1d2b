//! Reconstruction metrics: volumetric IoU, Chamfer distance (x100) and
//! F-Score at an absolute threshold, all in the normalized frame of the
//! reference shape.

use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{normalize_frame, sample_surface, Aabb, MeshIndex, TriMesh, Vec3};
use crate::mesher::default_bounds;
use crate::model::LdifModel;
use crate::rng;

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_SAMPLES: usize = 100_000;

/// Exact nearest-neighbor queries over a fixed point set, bucketed on a
/// uniform grid.
pub struct PointIndex {
    points: Vec<Vec3>,
    bounds: Aabb,
    cell: f64,
    dims: [usize; 3],
    /// Point indices sorted by cell, with `starts[c]..starts[c + 1]` per cell.
    order: Vec<u32>,
    starts: Vec<u32>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let bounds = Aabb::from_points(points);
        let ext = bounds.extent();
        // About two points per cell on a surface-like set.
        let longest = ext.max().max(1e-12);
        let per_axis = ((points.len() as f64 / 2.0).sqrt()).clamp(1.0, 1024.0);
        let cell = longest / per_axis;
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(2048));
        let mut index = PointIndex {
            points: points.to_vec(),
            bounds,
            cell,
            dims,
            order: Vec::new(),
            starts: Vec::new(),
        };
        let cells: Vec<usize> = points.iter().map(|p| index.cell_id(index.cell_of(p))).collect();
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; n_cells + 1];
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index.order = order;
        index.starts = counts;
        Ok(index)
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        let q = self.bounds.clamp(p) - self.bounds.min;
        [0, 1, 2].map(|a| ((q[a] / self.cell) as usize).min(self.dims[a] - 1))
    }

    fn cell_id(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Squared distance to, and index of, the nearest point.
    pub fn nearest(&self, q: &Vec3) -> (f64, usize) {
        let c = self.cell_of(q);
        let outside = self.bounds.distance_squared(q);
        let mut best = (f64::INFINITY, 0usize);
        let max_ring = *self.dims.iter().max().unwrap();
        for ring in 0..=max_ring {
            let lo = c.map(|v| v as isize - ring as isize);
            let hi = c.map(|v| v as isize + ring as isize);
            for i in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                for j in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    for k in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                        let on_shell = i == lo[0] || i == hi[0] || j == lo[1] || j == hi[1] || k == lo[2] || k == hi[2];
                        if !on_shell {
                            continue;
                        }
                        let id = self.cell_id([i as usize, j as usize, k as usize]);
                        for &p in &self.order[self.starts[id] as usize..self.starts[id + 1] as usize] {
                            let d = (self.points[p as usize] - q).norm_squared();
                            if d < best.0 || (d == best.0 && (p as usize) < best.1) {
                                best = (d, p as usize);
                            }
                        }
                    }
                }
            }
            // Unvisited points are at least `ring` whole cells from the query
            // clamped onto the box, and for the projection q' of q onto a
            // convex set |q - p|^2 >= |q - q'|^2 + |q' - p|^2.
            let reach = ring as f64 * self.cell;
            if best.0 <= outside + reach * reach {
                break;
            }
        }
        best
    }

    /// Squared nearest distances for many queries, in query order.
    pub fn nearest_distances(&self, queries: &[Vec3]) -> Vec<f64> {
        queries.par_iter().map(|q| self.nearest(q).0).collect()
    }
}

fn brute_force_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    from.iter()
        .map(|a| to.iter().map(|b| (a - b).norm_squared()).fold(f64::INFINITY, f64::min))
        .collect()
}

fn nn_squared(from: &[Vec3], to: &[Vec3]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if from.len() * to.len() <= 1_000_000 {
        return Ok(brute_force_distances(from, to));
    }
    Ok(PointIndex::new(to)?.nearest_distances(from))
}

/// `100 * (mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2)`.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(100.0 * (mean(nn_squared(a, b)?) + mean(nn_squared(b, a)?)))
}

/// Precision, recall and F-Score, all in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

pub fn fscore_points(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<FScore> {
    let within = |d: Vec<f64>| {
        let n = d.len() as f64;
        100.0 * d.iter().filter(|&&x| x <= tau * tau).count() as f64 / n
    };
    let precision = within(nn_squared(pred, gt)?);
    let recall = within(nn_squared(gt, pred)?);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        fscore,
    })
}

/// A shape whose volume can be tested point-wise.
#[derive(Clone, Copy)]
pub enum Solid<'a> {
    Model(&'a LdifModel, f64),
    Mesh(&'a TriMesh),
}

impl Solid<'_> {
    fn bounds(&self) -> Aabb {
        match self {
            Solid::Model(m, iso) => {
                let b = default_bounds(m, *iso);
                Aabb::from_points(
                    &(0..8)
                        .map(|c| {
                            m.to_object(&Vec3::new(
                                if c & 1 == 0 { b.min.x } else { b.max.x },
                                if c & 2 == 0 { b.min.y } else { b.max.y },
                                if c & 4 == 0 { b.min.z } else { b.max.z },
                            ))
                        })
                        .collect::<Vec<_>>(),
                )
            }
            Solid::Mesh(m) => m.bounds(),
        }
    }

    fn labels(&self, points: &[Vec3]) -> Result<Vec<bool>> {
        match self {
            Solid::Model(m, iso) => {
                let local: Vec<Vec3> = points.iter().map(|p| m.to_model(p)).collect();
                Ok(m.prepare().eval_batch(&local).into_iter().map(|v| v < *iso).collect())
            }
            Solid::Mesh(mesh) => {
                let index = MeshIndex::watertight(mesh)?;
                Ok(points.par_iter().map(|p| index.inside(p)).collect())
            }
        }
    }
}

/// Volumetric IoU from `n` uniform samples in the union of both bounding
/// boxes, padded by 5%.
pub fn metric_iou(pred: Solid, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    let bounds = pred.bounds().union(&gt.bounds()).scaled(1.05);
    let mut r = rng::substream(seed, "metrics-iou", 0);
    let ext = bounds.extent();
    let points: Vec<Vec3> = (0..n)
        .map(|_| bounds.min + Vec3::from_fn(|a, _| r.random::<f64>() * ext[a]))
        .collect();
    let a = pred.labels(&points)?;
    let b = Solid::Mesh(gt).labels(&points)?;
    let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let either = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
    if either == 0 {
        log::warn!("neither shape contains any IoU sample; reporting 0");
        return Ok(0.0);
    }
    Ok(both as f64 / either as f64)
}

/// Both shapes are sampled from the same stream, so identical meshes yield
/// identical point sets.
fn surface_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    Ok(sample_surface(mesh, n, rng::substream_seed(seed, "metrics-surface", 0))?.points)
}

pub fn metric_chamfer(pred: &TriMesh, gt: &TriMesh, n: usize, seed: u64) -> Result<f64> {
    chamfer_points(
        &surface_points(pred, n, seed)?,
        &surface_points(gt, n, seed)?,
    )
}

pub fn metric_fscore(pred: &TriMesh, gt: &TriMesh, tau: f64, n: usize, seed: u64) -> Result<f64> {
    Ok(fscore_points(
        &surface_points(pred, n, seed)?,
        &surface_points(gt, n, seed)?,
        tau,
    )?
    .fscore)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsConfig {
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tau: DEFAULT_TAU,
            samples: DEFAULT_SAMPLES,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    /// `None` when either mesh is not watertight.
    pub iou: Option<f64>,
    pub chamfer: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub samples: usize,
    pub tau: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "iou,chamfer,fscore,precision,recall,samples,tau";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iou.map(|v| v.to_string()).unwrap_or_default(),
            self.chamfer,
            self.fscore,
            self.precision,
            self.recall,
            self.samples,
            self.tau
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.iou {
            Some(v) => writeln!(f, "IoU            {v:.4}")?,
            None => writeln!(f, "IoU            n/a")?,
        }
        writeln!(f, "Chamfer x100   {:.6}", self.chamfer)?;
        writeln!(
            f,
            "F-Score@{}   {:.2}  (precision {:.2}, recall {:.2})",
            self.tau, self.fscore, self.precision, self.recall
        )?;
        write!(f, "samples        {}", self.samples)
    }
}

/// All metrics for a predicted mesh against a reference mesh, in the
/// reference's normalized frame.
pub fn evaluate(pred: &TriMesh, gt: &TriMesh, cfg: &MetricsConfig) -> Result<MetricsReport> {
    let (gt_n, sim) = normalize_frame(gt)?;
    let pred_n = pred.transformed(|p| sim.apply(p));
    let iou = if !gt_n.is_watertight() {
        log::warn!("reference mesh is not watertight; IoU disabled");
        None
    } else if !pred_n.is_watertight() {
        log::warn!("predicted mesh is not watertight; IoU disabled");
        None
    } else {
        Some(metric_iou(Solid::Mesh(&pred_n), &gt_n, cfg.samples, cfg.seed)?)
    };
    let a = surface_points(&pred_n, cfg.samples, cfg.seed)?;
    let b = surface_points(&gt_n, cfg.samples, cfg.seed)?;
    let f = fscore_points(&a, &b, cfg.tau)?;
    Ok(MetricsReport {
        iou,
        chamfer: chamfer_points(&a, &b)?,
        fscore: f.fscore,
        precision: f.precision,
        recall: f.recall,
        samples: cfg.samples,
        tau: cfg.tau,
    })
}
