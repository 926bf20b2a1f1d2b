//! Auto-decoder fitting of a model to one watertight mesh.
//!
//! There is no encoder: the raw element variables, the latent codes and
//! (unless frozen) the decoder weights are optimized directly with Adam on
//! freshly drawn labeled samples every step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::decoder::DecoderWeights;
use crate::error::{Error, Result};
use crate::geom::{
    normalize_frame, sample_near_surface, sample_surface, sample_uniform, sdf_grid_from_index,
    MeshIndex, SdfGrid, TriMesh, Vec3,
};
use crate::grad::{adam_step, loss_and_grad, AdamConfig, AdamState, ParameterVector, Segment};
use crate::loss::{LossConfig, LossValues};
use crate::model::{default_sym_count, LdifModel, RawElementVars, MAX_RADIUS};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub n_elements: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Near-surface samples per step.
    pub near_count: usize,
    /// Uniform samples per step, drawn in the padded bounding box.
    pub uniform_count: usize,
    /// Standard deviation of the near-surface displacement, in the
    /// normalized frame (longest bounding box edge = 1).
    pub near_sigma: f64,
    pub freeze_decoder: bool,
    /// Steps at the start during which the decoder is held fixed, so that the
    /// elements settle before the residual starts to train.
    pub warmup: usize,
    /// Defaults to half the elements, rounded up.
    pub sym_count: Option<usize>,
    pub sym_axis: usize,
    pub loss: LossConfig,
    /// Standard deviation of the latent-to-affine weights at initialization.
    pub init_std: f64,
    /// Start from these decoder weights instead of a random decoder.
    pub decoder: Option<DecoderWeights>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_elements: 32,
            latent_dim: 32,
            hidden: 32,
            steps: 5000,
            adam: AdamConfig::default(),
            seed: 7,
            near_count: 1024,
            uniform_count: 1024,
            near_sigma: 0.01,
            freeze_decoder: false,
            warmup: 500,
            sym_count: None,
            sym_axis: 0,
            loss: LossConfig::default(),
            init_std: 0.02,
            decoder: None,
        }
    }
}

impl FitConfig {
    pub fn sym_count(&self) -> usize {
        self.sym_count
            .unwrap_or_else(|| default_sym_count(self.n_elements))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_elements == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return bad("element count, latent width and hidden width must be positive");
        }
        if self.sym_count() > self.n_elements {
            return bad("sym_count exceeds the element count");
        }
        if self.sym_axis > 2 {
            return bad("symmetry axis must be 0, 1 or 2");
        }
        if self.near_count + self.uniform_count == 0 {
            return bad("at least one sample per step is required");
        }
        if !(self.near_sigma >= 0.0) || !(self.adam.lr > 0.0) {
            return bad("near_sigma must be non-negative and lr positive");
        }
        if let Some(d) = &self.decoder {
            if d.latent != self.latent_dim || d.hidden != self.hidden {
                return Err(Error::InvalidArgument(format!(
                    "decoder has M={}, H={} but the fit uses M={}, H={}",
                    d.latent, d.hidden, self.latent_dim, self.hidden
                )));
            }
        }
        Ok(())
    }
}

/// One row of the loss trace, measured before that step's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub values: LossValues,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// The activated model, with the object-to-model frame attached.
    pub model: LdifModel,
    pub params: ParameterVector,
    pub trace: Vec<TraceRow>,
}

/// The mesh in the fitting frame plus everything derived from it once.
pub struct FitTarget {
    pub mesh: TriMesh,
    pub frame: crate::geom::Similarity,
    pub index: MeshIndex,
    pub grid: SdfGrid,
}

impl FitTarget {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let (normalized, frame) = normalize_frame(mesh)?;
        if !(normalized.area() > 0.0) {
            return Err(Error::DegenerateMesh);
        }
        let index = MeshIndex::watertight(&normalized)?;
        let grid = sdf_grid_from_index(&index)?;
        Ok(FitTarget {
            mesh: normalized,
            frame,
            index,
            grid,
        })
    }
}

/// k-means++ seeding followed by Lloyd iterations.
fn kmeans(points: &[Vec3], k: usize, iterations: usize, rng: &mut rng::Rng) -> Vec<Vec3> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            points[pick]
        } else {
            points[rng.random_range(0..points.len())]
        };
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - next).norm_squared());
        }
        centers.push(next);
    }
    let mut assign = vec![0usize; points.len()];
    for _ in 0..iterations {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| {
                    (p - centers[i])
                        .norm_squared()
                        .total_cmp(&(p - centers[j]).norm_squared())
                })
                .unwrap();
            changed |= *a != best;
            *a = best;
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (a, p) in assign.iter().zip(points) {
            sums[*a] += p;
            counts[*a] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centers[i] = sums[i] / counts[i] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

/// Initial parameters and optimizer state for fitting `target`.
///
/// Centers come from k-means on surface samples; every element starts with
/// `c = -1`, radii near 0.05 and no rotation, latents are zero and the
/// decoder output layer is zero, so the initial model is a pure Gaussian
/// mixture.
pub fn initialize_target(target: &FitTarget, cfg: &FitConfig) -> Result<(ParameterVector, AdamState)> {
    cfg.validate()?;
    let surface = sample_surface(&target.mesh, 10_000, rng::substream_seed(cfg.seed, "init-surface", 0))?;
    let mut r = rng::substream(cfg.seed, "init-kmeans", 0);
    let mut centers = kmeans(&surface.points, cfg.n_elements, 50, &mut r);
    // Elements far from the symmetry plane make the best symmetric elements.
    let axis = cfg.sym_axis;
    centers.sort_by(|a, b| b[axis].abs().total_cmp(&a[axis].abs()));

    let y_r = (0.05 / (MAX_RADIUS - 0.05)).ln();
    let raw: Vec<RawElementVars> = centers
        .iter()
        .map(|c| RawElementVars {
            y_c: 1.0,
            y_p: c * 2.0,
            y_r: Vec3::repeat(y_r),
            y_e: Vec3::zeros(),
        })
        .collect();
    let latents = vec![vec![0.0; cfg.latent_dim]; cfg.n_elements];
    let decoder = match &cfg.decoder {
        Some(d) => d.clone(),
        None => {
            let mut r = rng::substream(cfg.seed, "init-decoder", 0);
            DecoderWeights::init(cfg.latent_dim, cfg.hidden, cfg.init_std, &mut r)
        }
    };
    let params = ParameterVector::from_parts(&raw, &latents, &decoder, cfg.sym_count(), axis);
    let state = AdamState::new(params.values.len(), cfg.adam);
    Ok((params, state))
}

/// [`initialize_target`] for an object-space mesh.
pub fn initialize(mesh: &TriMesh, cfg: &FitConfig) -> Result<(ParameterVector, AdamState)> {
    initialize_target(&FitTarget::new(mesh)?, cfg)
}

/// Fits a model to a watertight mesh.
pub fn fit(mesh: &TriMesh, cfg: &FitConfig) -> Result<FitResult> {
    fit_target(&FitTarget::new(mesh)?, cfg)
}

pub fn fit_target(target: &FitTarget, cfg: &FitConfig) -> Result<FitResult> {
    let (mut params, mut state) = initialize_target(target, cfg)?;
    let bounds = target.grid.bounds;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut samples = sample_near_surface(
            &target.index,
            cfg.near_count,
            cfg.near_sigma,
            cfg.loss.w_surface,
            rng::substream_seed(cfg.seed, "near", step as u64),
        )?;
        samples.extend(sample_uniform(
            &bounds,
            cfg.uniform_count,
            &target.index,
            cfg.loss.w_uniform,
            rng::substream_seed(cfg.seed, "uniform", step as u64),
        ));
        let frozen = cfg.freeze_decoder || step < cfg.warmup;
        let (values, mut grad) = match loss_and_grad(&params, &samples, &target.grid, &cfg.loss, !frozen) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { step }),
            Err(e) => return Err(e),
        };
        if frozen {
            grad.segment_mut(Segment::Decoder).fill(0.0);
        }
        adam_step(&mut state, &mut params.values, &grad.values);
        if params.check_finite().is_err() {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(TraceRow { step, values });
        if step % 500 == 0 {
            log::debug!(
                "step {step}: l_p {:.6} l_c {:.6} total {:.6}",
                values.point,
                values.center,
                values.total
            );
        }
    }
    let mut model = params.to_model()?;
    model.frame = Some(target.frame);
    Ok(FitResult {
        model,
        params,
        trace,
    })
}

/// Loss trace as CSV: `step,l_p,l_c,total`.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,l_p,l_c,total\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.step, r.values.point, r.values.center, r.values.total
        );
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

/// Centered moving average of the total loss with the given window,
/// one value per complete window position.
pub fn moving_average(trace: &[TraceRow], window: usize) -> Vec<f64> {
    if window == 0 || trace.len() < window {
        return Vec::new();
    }
    let mut sum: f64 = trace[..window].iter().map(|r| r.values.total).sum();
    let mut out = vec![sum / window as f64];
    for i in window..trace.len() {
        sum += trace[i].values.total - trace[i - window].values.total;
        out.push(sum / window as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::eval_ldif;

    fn small() -> FitConfig {
        FitConfig {
            n_elements: 4,
            latent_dim: 4,
            hidden: 4,
            steps: 0,
            near_count: 128,
            uniform_count: 128,
            ..FitConfig::default()
        }
    }

    #[test]
    fn init_is_a_pure_gaussian_mixture() {
        let sphere = fixtures::icosphere(2, 1.0);
        let (params, state) = initialize(&sphere, &small()).unwrap();
        assert_eq!(state.step_count, 0);
        let model = params.to_model().unwrap();
        assert!(model.decoder.output_is_zero());
        for e in &model.elements {
            assert_eq!(e.scale, -1.0);
            assert!((e.radii - Vec3::repeat(0.05)).norm() < 1e-12);
            assert_eq!(e.euler, Vec3::zeros());
        }
        let x = Vec3::new(0.1, -0.2, 0.05);
        let mut sif = model.clone();
        sif.decoder = DecoderWeights::zeros(4, 4);
        assert_eq!(eval_ldif(&x, &model), eval_ldif(&x, &sif));
    }

    #[test]
    fn single_element_starts_at_centroid() {
        let sphere = fixtures::icosphere(3, 1.0);
        let cfg = FitConfig {
            n_elements: 1,
            sym_count: Some(0),
            ..small()
        };
        let (params, _) = initialize(&sphere, &cfg).unwrap();
        let c = params.to_model().unwrap().elements[0].center;
        assert!(c.norm() < 0.05, "{c:?}");
    }

    #[test]
    fn init_is_deterministic() {
        let m = fixtures::torus(1.0, 0.4, 32, 16);
        let a = initialize(&m, &small()).unwrap();
        let b = initialize(&m, &small()).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let sphere = fixtures::icosphere(2, 1.0);
        let (params, _) = initialize(&sphere, &small()).unwrap();
        let r = fit(&sphere, &small()).unwrap();
        assert_eq!(r.params, params);
        assert!(r.trace.is_empty());
        assert!(r.model.frame.is_some());
    }

    #[test]
    fn frozen_decoder_is_untouched() {
        let sphere = fixtures::icosphere(2, 1.0);
        let cfg = FitConfig {
            steps: 20,
            freeze_decoder: true,
            ..small()
        };
        let (init, _) = initialize(&sphere, &cfg).unwrap();
        let r = fit(&sphere, &cfg).unwrap();
        assert_eq!(r.params.segment(Segment::Decoder), init.segment(Segment::Decoder));
        assert_ne!(r.params.segment(Segment::Elements), init.segment(Segment::Elements));
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let flat = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2], [0, 2, 1]],
        )
        .unwrap();
        assert!(initialize(&flat, &small()).is_err());
    }

    #[test]
    fn moving_average_of_constant() {
        let row = |step| TraceRow {
            step,
            values: LossValues {
                point: 1.0,
                center: 0.0,
                total: 2.0,
            },
        };
        let t: Vec<_> = (0..10).map(row).collect();
        assert_eq!(moving_average(&t, 4), vec![2.0; 7]);
        assert!(trace_to_csv(&t).starts_with("step,l_p,l_c,total\n0,1,0,2\n"));
    }
}
