//! Reverse-mode gradient of the training loss with respect to the raw
//! element variables, the latent codes and the decoder weights, and the Adam
//! optimizer that consumes it.
//!
//! The backward pass uses closed-form adjoints for every stage:
//! activation -> element transform -> Gaussian and decoder -> field -> loss.
//! Non-smooth points follow fixed conventions: `d|y|/dy = sign(y)` with
//! `sign(0) = 0`, clamp passes the gradient only inside `[-pi/4, pi/4]`,
//! and `relu'(0) = 0`.

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;

use crate::decoder::{param_count, Activations, BackwardScratch, Conditioning, DecoderGrad, DecoderWeights};
use crate::error::{Error, Result};
use crate::geom::{LabeledSampleSet, Mat3, SdfGrid, Vec3};
use crate::loss::{center_term, point_term, LossConfig, LossValues};
use crate::model::{
    activate, element_transform, euler_rotation_derivatives, reflect, sigmoid, ElementParams,
    ElementTransform, LdifModel, RawElementVars, EULER_LIMIT, MAX_RADIUS,
};

/// Samples per parallel work unit. Fixed so that the reduction order, and
/// hence every bit of the result, is independent of the thread count.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Elements,
    Latents,
    Decoder,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Elements => "element",
            Segment::Latents => "latent",
            Segment::Decoder => "decoder",
        })
    }
}

/// Dimensions of a flattened parameter vector:
/// `[raw element vars (10 N) | latents (N M) | decoder weights]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_elements: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub sym_count: usize,
    pub sym_axis: usize,
}

impl Layout {
    pub fn range(&self, segment: Segment) -> Range<usize> {
        let e = 10 * self.n_elements;
        let l = e + self.n_elements * self.latent_dim;
        match segment {
            Segment::Elements => 0..e,
            Segment::Latents => e..l,
            Segment::Decoder => l..l + param_count(self.latent_dim, self.hidden),
        }
    }

    pub fn len(&self) -> usize {
        self.range(Segment::Decoder).end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment_of(&self, index: usize) -> Segment {
        [Segment::Elements, Segment::Latents, Segment::Decoder]
            .into_iter()
            .find(|s| self.range(*s).contains(&index))
            .expect("index within layout")
    }
}

/// Flat optimization variables with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Layout) -> Self {
        ParameterVector {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn from_parts(
        raw: &[RawElementVars],
        latents: &[Vec<f64>],
        decoder: &DecoderWeights,
        sym_count: usize,
        sym_axis: usize,
    ) -> Self {
        let layout = Layout {
            n_elements: raw.len(),
            latent_dim: decoder.latent,
            hidden: decoder.hidden,
            sym_count,
            sym_axis,
        };
        let mut values = Vec::with_capacity(layout.len());
        for r in raw {
            values.extend_from_slice(&r.to_array());
        }
        for z in latents {
            assert_eq!(z.len(), decoder.latent);
            values.extend_from_slice(z);
        }
        values.extend(decoder.flatten());
        ParameterVector { layout, values }
    }

    pub fn segment(&self, s: Segment) -> &[f64] {
        &self.values[self.layout.range(s)]
    }

    pub fn segment_mut(&mut self, s: Segment) -> &mut [f64] {
        let r = self.layout.range(s);
        &mut self.values[r]
    }

    pub fn raw_element(&self, i: usize) -> RawElementVars {
        RawElementVars::from_slice(&self.values[10 * i..10 * i + 10])
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        let m = self.layout.latent_dim;
        &self.segment(Segment::Latents)[i * m..(i + 1) * m]
    }

    pub fn decoder(&self) -> DecoderWeights {
        let mut d = DecoderWeights::zeros(self.layout.latent_dim, self.layout.hidden);
        d.unflatten(self.segment(Segment::Decoder));
        d
    }

    /// The activated model these variables describe.
    pub fn to_model(&self) -> Result<LdifModel> {
        let n = self.layout.n_elements;
        LdifModel::new(
            (0..n).map(|i| activate(&self.raw_element(i))).collect(),
            (0..n).map(|i| self.latent(i).to_vec()).collect(),
            self.decoder(),
            self.layout.sym_count,
            self.layout.sym_axis,
        )
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(self.layout.segment_of(i))),
            None => Ok(()),
        }
    }
}

fn sign(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else if y < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct ElementCtx {
    params: ElementParams,
    transform: ElementTransform,
    rotation: Mat3,
    drot: [Mat3; 3],
    inv_radii: Vec3,
    cond: Conditioning,
    // Derivatives of the activation functions.
    dscale_dy: f64,
    dradii_dy: Vec3,
    deuler_dy: Vec3,
}

impl ElementCtx {
    fn new(raw: &RawElementVars, z: &[f64], decoder: &DecoderWeights) -> Result<Self> {
        let params = activate(raw);
        Ok(ElementCtx {
            transform: element_transform(&params)?,
            rotation: params.rotation(),
            drot: euler_rotation_derivatives(&params.euler),
            inv_radii: params.radii.map(|r| 1.0 / r),
            cond: decoder.condition(z)?,
            dscale_dy: -sign(raw.y_c),
            dradii_dy: raw.y_r.map(|y| {
                let s = sigmoid(y);
                MAX_RADIUS * s * (1.0 - s)
            }),
            deuler_dy: raw
                .y_e
                .map(|y| if y.abs() <= EULER_LIMIT { 1.0 } else { 0.0 }),
            params,
        })
    }
}

/// Per-element adjoints and decoder adjoints accumulated over samples.
#[derive(Clone)]
struct Accum {
    point_loss: f64,
    d_scale: Vec<f64>,
    d_center: Vec<Vec3>,
    d_radii: Vec<Vec3>,
    d_rotation: Vec<Mat3>,
    d_gamma: Vec<[Vec<f64>; 3]>,
    d_beta: Vec<[Vec<f64>; 3]>,
    decoder: DecoderGrad,
}

impl Accum {
    fn new(n: usize, hidden: usize) -> Self {
        let hv = || [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]];
        Accum {
            point_loss: 0.0,
            d_scale: vec![0.0; n],
            d_center: vec![Vec3::zeros(); n],
            d_radii: vec![Vec3::zeros(); n],
            d_rotation: vec![Mat3::zeros(); n],
            d_gamma: (0..n).map(|_| hv()).collect(),
            d_beta: (0..n).map(|_| hv()).collect(),
            decoder: DecoderGrad::zeros(hidden),
        }
    }

    fn add_assign(&mut self, o: &Accum) {
        self.point_loss += o.point_loss;
        for i in 0..self.d_scale.len() {
            self.d_scale[i] += o.d_scale[i];
            self.d_center[i] += o.d_center[i];
            self.d_radii[i] += o.d_radii[i];
            self.d_rotation[i] += o.d_rotation[i];
            for k in 0..3 {
                for (a, b) in self.d_gamma[i][k].iter_mut().zip(&o.d_gamma[i][k]) {
                    *a += b;
                }
                for (a, b) in self.d_beta[i][k].iter_mut().zip(&o.d_beta[i][k]) {
                    *a += b;
                }
            }
        }
        self.decoder.add_assign(&o.decoder);
    }
}

/// One evaluated term `g(q) (1 + f(T q))` kept for the backward pass.
struct Term {
    element: usize,
    query: Vec3,
    local: Vec3,
    gauss: f64,
    residual: f64,
}

struct Evaluator<'a> {
    ctx: &'a [ElementCtx],
    decoder: &'a DecoderWeights,
    layout: Layout,
    /// Whether the decoder participates; when false, `f == 0` is assumed and
    /// no decoder or latent adjoints are produced.
    residual: bool,
}

impl Evaluator<'_> {
    fn accumulate(
        &self,
        samples: &LabeledSampleSet,
        range: Range<usize>,
        cfg: &LossConfig,
        upstream_scale: f64,
    ) -> Accum {
        let n = self.ctx.len();
        let h = self.decoder.hidden;
        let mut acc = Accum::new(n, h);
        let n_terms = n + self.layout.sym_count;
        let mut acts: Vec<Activations> = (0..n_terms).map(|_| Activations::new(h)).collect();
        let mut terms: Vec<Term> = Vec::with_capacity(n_terms);
        let mut scratch = BackwardScratch::new(h);

        for s in range {
            let x = samples.points[s];
            let mirrored = reflect(&x, self.layout.sym_axis);
            terms.clear();
            let mut value = 0.0;
            for (i, e) in self.ctx.iter().enumerate() {
                let queries: &[Vec3] = if i < self.layout.sym_count {
                    &[x, mirrored]
                } else {
                    std::slice::from_ref(&x)
                };
                for q in queries {
                    let local = e.transform.apply(q);
                    let gauss = e.params.scale * (-0.5 * local.norm_squared()).exp();
                    let residual = if self.residual {
                        let act = &mut acts[terms.len()];
                        self.decoder
                            .forward_conditioned(&[local.x, local.y, local.z], &e.cond, act)
                    } else {
                        0.0
                    };
                    value += gauss * (1.0 + residual);
                    terms.push(Term {
                        element: i,
                        query: *q,
                        local,
                        gauss,
                        residual,
                    });
                }
            }

            let (loss, dvalue) = point_term(value, samples.indicator(s), samples.weights[s], cfg);
            acc.point_loss += loss;
            let upstream = dvalue * upstream_scale;
            if upstream == 0.0 {
                continue;
            }

            for (t, term) in terms.iter().enumerate() {
                let i = term.element;
                let e = &self.ctx[i];
                let d_gauss = upstream * (1.0 + term.residual);
                // d/dc of c exp(-|l|^2/2) is exp(-|l|^2/2).
                acc.d_scale[i] += d_gauss * (-0.5 * term.local.norm_squared()).exp();
                let mut d_local = -d_gauss * term.gauss * term.local;
                if self.residual {
                    let dx = self.decoder.backward(
                        &[term.local.x, term.local.y, term.local.z],
                        &e.cond,
                        &acts[t],
                        upstream * term.gauss,
                        &mut acc.decoder,
                        &mut acc.d_gamma[i],
                        &mut acc.d_beta[i],
                        &mut scratch,
                    );
                    d_local += Vec3::from(dx);
                }
                // local = diag(1/r) u,  u = R^T (q - p)
                let d_u = d_local.component_mul(&e.inv_radii);
                acc.d_radii[i] -= d_local.component_mul(&term.local).component_mul(&e.inv_radii);
                let d = term.query - e.params.center;
                acc.d_center[i] -= e.rotation * d_u;
                acc.d_rotation[i] += d * d_u.transpose();
            }
        }
        acc
    }
}

/// Gradient of `loss_total` at `params`.
pub fn grad_loss(
    params: &ParameterVector,
    samples: &LabeledSampleSet,
    grid: &SdfGrid,
    cfg: &LossConfig,
) -> Result<ParameterVector> {
    Ok(loss_and_grad(params, samples, grid, cfg, true)?.1)
}

/// Loss values and gradient in one pass.
///
/// With `decoder_grad == false` and a zero output layer the decoder is
/// skipped entirely (`f == 0`), and the latent and decoder segments of the
/// gradient are zero.
pub fn loss_and_grad(
    params: &ParameterVector,
    samples: &LabeledSampleSet,
    grid: &SdfGrid,
    cfg: &LossConfig,
    decoder_grad: bool,
) -> Result<(LossValues, ParameterVector)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    params.check_finite()?;
    let layout = params.layout;
    let n = layout.n_elements;
    let decoder = params.decoder();
    let ctx = (0..n)
        .map(|i| ElementCtx::new(&params.raw_element(i), params.latent(i), &decoder))
        .collect::<Result<Vec<_>>>()?;
    let eval = Evaluator {
        ctx: &ctx,
        decoder: &decoder,
        layout,
        residual: decoder_grad || !decoder.output_is_zero(),
    };
    let count = samples.len();
    let upstream_scale = cfg.w_point / count as f64;
    let chunks: Vec<Accum> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| eval.accumulate(samples, c * CHUNK..((c + 1) * CHUNK).min(count), cfg, upstream_scale))
        .collect();
    let mut acc = Accum::new(n, decoder.hidden);
    for c in &chunks {
        acc.add_assign(c);
    }

    let beta = cfg.beta_for(grid);
    let mut center_loss = 0.0;
    for (i, e) in ctx.iter().enumerate() {
        let (v, g) = center_term(&e.params.center, grid, beta);
        center_loss += v;
        acc.d_center[i] += cfg.w_center * g;
    }

    let mut grad = ParameterVector::zeros(layout);
    for (i, e) in ctx.iter().enumerate() {
        let d_euler = Vec3::from_fn(|k, _| acc.d_rotation[i].component_mul(&e.drot[k]).sum());
        let raw = RawElementVars {
            y_c: acc.d_scale[i] * e.dscale_dy,
            y_p: acc.d_center[i] * 0.5,
            y_r: acc.d_radii[i].component_mul(&e.dradii_dy),
            y_e: d_euler.component_mul(&e.deuler_dy),
        };
        grad.values[10 * i..10 * i + 10].copy_from_slice(&raw.to_array());
    }

    if eval.residual {
        let m = layout.latent_dim;
        let h = layout.hidden;
        let mut dec = DecoderWeights::zeros(m, h);
        dec.input = acc.decoder.input.clone();
        dec.res1 = acc.decoder.res1.clone();
        dec.res2 = acc.decoder.res2.clone();
        dec.output = acc.decoder.output.clone();
        let mut d_latents = vec![0.0; n * m];
        for i in 0..n {
            let z = params.latent(i);
            let dz = &mut d_latents[i * m..(i + 1) * m];
            for k in 0..3 {
                for (lin, dvec, dlin) in [
                    (&decoder.cbn[k].gamma, &acc.d_gamma[i][k], 0usize),
                    (&decoder.cbn[k].beta, &acc.d_beta[i][k], 1usize),
                ] {
                    let target = if dlin == 0 {
                        &mut dec.cbn[k].gamma
                    } else {
                        &mut dec.cbn[k].beta
                    };
                    for (j, dv) in dvec.iter().enumerate() {
                        target.bias[j] += dv;
                        for (a, za) in z.iter().enumerate() {
                            target.weight[j * m + a] += dv * za;
                            dz[a] += lin.weight[j * m + a] * dv;
                        }
                    }
                }
            }
        }
        grad.segment_mut(Segment::Latents).copy_from_slice(&d_latents);
        grad.segment_mut(Segment::Decoder)
            .copy_from_slice(&dec.flatten());
    }
    grad.check_finite()?;

    let point = acc.point_loss / count as f64;
    let values = LossValues {
        point,
        center: center_loss,
        total: cfg.w_point * point + cfg.w_center * center_loss,
    };
    if !values.total.is_finite() {
        return Err(Error::NonFinite(Segment::Elements));
    }
    Ok((values, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, laid out like the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.first_moment.len());
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut s = AdamState::new(
            1,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        let mut p = [0.0];
        adam_step(&mut s, &mut p, &[1.0]);
        // m_hat = 1, v_hat = 1: step = 0.1 / (1 + 1e-8).
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 3.5];
        for _ in 0..5 {
            adam_step(&mut s, &mut p, &[0.0; 3]);
        }
        assert_eq!(p, [1.0, -2.0, 3.5]);
    }

    #[test]
    fn adam_constant_gradient_descends() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = [0.0];
        adam_step(&mut s, &mut p, &[0.3]);
        let after_one = p[0];
        adam_step(&mut s, &mut p, &[0.3]);
        assert!(after_one < 0.0 && p[0] < after_one);
    }

    #[test]
    fn layout_ranges() {
        let l = Layout {
            n_elements: 2,
            latent_dim: 4,
            hidden: 4,
            sym_count: 1,
            sym_axis: 0,
        };
        assert_eq!(l.range(Segment::Elements), 0..20);
        assert_eq!(l.range(Segment::Latents), 20..28);
        assert_eq!(l.len(), 28 + param_count(4, 4));
        assert_eq!(l.segment_of(25), Segment::Latents);
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-3.0), -1.0);
    }
}
