//! Training objective: `w_P * L_P + w_C * L_C`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{LabeledSampleSet, SdfGrid, Vec3};
use crate::model::{sigmoid, LdifModel, DEFAULT_ISOLEVEL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Sigmoid sharpness.
    pub alpha: f64,
    /// Weight of near-surface samples.
    pub w_surface: f64,
    /// Weight of uniform samples.
    pub w_uniform: f64,
    pub w_point: f64,
    pub w_center: f64,
    pub isolevel: f64,
    /// Center-loss threshold; half a grid cell when `None`.
    pub beta: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 100.0,
            w_surface: 0.1,
            w_uniform: 1.0,
            w_point: 1.0,
            w_center: 10.0,
            isolevel: DEFAULT_ISOLEVEL,
            beta: None,
        }
    }
}

impl LossConfig {
    pub fn beta_for(&self, grid: &SdfGrid) -> f64 {
        self.beta.unwrap_or(0.5 * grid.spacing())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub point: f64,
    pub center: f64,
    pub total: f64,
}

/// One sample's unnormalized contribution `w (sig(alpha (v - l)) - I)^2`
/// and its derivative with respect to the field value `v`.
pub(crate) fn point_term(value: f64, indicator: f64, weight: f64, cfg: &LossConfig) -> (f64, f64) {
    let s = sigmoid(cfg.alpha * (value - cfg.isolevel));
    let e = s - indicator;
    (weight * e * e, 2.0 * weight * e * s * (1.0 - s) * cfg.alpha)
}

/// One center's contribution to `L_C` and its gradient.
///
/// Inside the grid box: `G(p)^2` where `G(p) > beta`, else 0. Outside the box
/// the grid has no information, so the squared distance to the box is used.
pub(crate) fn center_term(p: &Vec3, grid: &SdfGrid, beta: f64) -> (f64, Vec3) {
    if !grid.bounds.contains(p) {
        let d = p - grid.bounds.clamp(p);
        return (d.norm_squared(), 2.0 * d);
    }
    let (g, dg) = grid.sample(p);
    if g > beta {
        (g * g, 2.0 * g * dg)
    } else {
        (0.0, Vec3::zeros())
    }
}

/// `(1/|C|) sum_i w_i (sig(alpha (LDIF(x_i) - l)) - I(x_i))^2`, with `I = 0`
/// inside and 1 outside. Sample points are in model coordinates.
pub fn loss_point_sample(model: &LdifModel, samples: &LabeledSampleSet, cfg: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let values = model.prepare().eval_batch(&samples.points);
    let sum: f64 = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| point_term(v, samples.indicator(i), samples.weights[i], cfg).0)
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(sum / samples.len() as f64)
}

pub fn loss_center(model: &LdifModel, grid: &SdfGrid, cfg: &LossConfig) -> f64 {
    let beta = cfg.beta_for(grid);
    model
        .elements
        .iter()
        .map(|e| center_term(&e.center, grid, beta).0)
        .sum()
}

pub fn loss_values(
    model: &LdifModel,
    samples: &LabeledSampleSet,
    grid: &SdfGrid,
    cfg: &LossConfig,
) -> Result<LossValues> {
    let point = loss_point_sample(model, samples, cfg)?;
    let center = loss_center(model, grid, cfg);
    Ok(LossValues {
        point,
        center,
        total: cfg.w_point * point + cfg.w_center * center,
    })
}

pub fn loss_total(
    model: &LdifModel,
    samples: &LabeledSampleSet,
    grid: &SdfGrid,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(loss_values(model, samples, grid, cfg)?.total)
}
